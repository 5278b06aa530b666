"""Smooth minimal leaves H_+/H_- on either side of a quadratic cone and the foliation H(t)."""
import math
from dataclasses import dataclass, field, replace
from typing import List, Dict, Any, Optional, Tuple, Callable

import numpy as np
from scipy.integrate import solve_ivp, solve_bvp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from rich.console import Console

from .config import (
    LEAF_RTOL, LEAF_ATOL, LEAF_LAUNCH, LEAF_S_MAX, LEAF_SAMPLES, LEAF_RADIUS_RATIO,
    POLAR_TABLE_SIZE, POLAR_TABLE_FLOOR, POLAR_EXTENSION_SAMPLES,
    BARRIER_SIGMA_RANGE, BARRIER_BISECTION_ITERS, BARRIER_MATCH_TOL,
)
from .cone_spectra import QuadraticCone
from .errors import BlowUp, NoConvergence, OutOfTable, NoBarrier

console = Console()

SIDES = ("plus", "minus")


def profile_rhs(s: float, y: np.ndarray, p: int, q: int) -> List[float]:
    """Equivariant minimal surface ODE in arclength form."""
    u, v, theta = y
    return [math.cos(theta), math.sin(theta),
            -p * math.sin(theta) / u + q * math.cos(theta) / v]


def _curvature_derivatives(u, v, theta, p, q):
    """theta' and theta'' along a solution of the profile ODE."""
    s, c = np.sin(theta), np.cos(theta)
    dtheta = -p * s / u + q * c / v
    d2theta = (-p * (c * dtheta * u - s * c) / u ** 2
               + q * (-s * dtheta * v - c * s) / v ** 2)
    return dtheta, d2theta


@dataclass(frozen=True)
class LeafProfile:
    """
    Arclength-sampled profile of a leaf in the (u, v) quadrant.

    samples has columns (s, u, v, theta). Raw ODE data is kept in _dense and
    mapped through `scale` (spatial factor) and `reflected` (u <-> v swap).
    """
    side: str  # "plus", "minus" or "cone"
    samples: np.ndarray
    asymptotic_coef: float
    remainder_exp: float
    normalized: bool
    cone: QuadraticCone
    scale: float = 1.0
    reflected: bool = False
    _dense: Optional[Callable] = field(default=None, repr=False, compare=False)
    _launch: Tuple[float, float, float] = (0.0, 1.0, 0.0)  # (S0, axis radius, theta'(0))
    _raw_end: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # (S_end, r_c end, raw coef)

    @property
    def s(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def u(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def v(self) -> np.ndarray:
        return self.samples[:, 2]

    @property
    def theta(self) -> np.ndarray:
        return self.samples[:, 3]

    @property
    def radius(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    @property
    def axis_radius(self) -> float:
        return float(self.radius[0])

    def state(self, s) -> Dict[str, np.ndarray]:
        """
        Evaluate (u, v, theta, theta', theta'') at arclength s.

        Inside the integrated range the dense ODE solution is used; beyond it
        the leaf continues as its asymptotic graph over the cone ray.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        cone = self.cone
        if self.side == "cone":
            zeros = np.zeros_like(s)
            return {"u": s * math.cos(cone.alpha), "v": s * math.sin(cone.alpha),
                    "theta": zeros + cone.alpha, "dtheta": zeros, "d2theta": zeros}

        raw_side = "plus" if (self.side == "plus") != self.reflected else "minus"
        S = s / self.scale
        S0, r0, k = self._launch
        S_end, rc_end, coef = self._raw_end
        u = np.empty_like(S)
        v = np.empty_like(S)
        th = np.empty_like(S)
        dth = np.empty_like(S)
        d2th = np.empty_like(S)

        taylor = S < S0
        if np.any(taylor):
            St = S[taylor]
            if raw_side == "plus":
                u[taylor] = St - k * k * St ** 3 / 6.0
                v[taylor] = r0 + k * St ** 2 / 2.0
                th[taylor] = k * St
            else:
                u[taylor] = r0 - k * St ** 2 / 2.0
                v[taylor] = St - k * k * St ** 3 / 6.0
                th[taylor] = math.pi / 2.0 + k * St
            dth[taylor] = k
            d2th[taylor] = 0.0

        inner = (~taylor) & (S <= S_end)
        if np.any(inner):
            y = self._dense(S[inner])
            u[inner], v[inner], th[inner] = y[0], y[1], y[2]
            dth[inner], d2th[inner] = _curvature_derivatives(y[0], y[1], y[2], cone.p, cone.q)

        outer = S > S_end
        if np.any(outer):
            g = cone.gamma
            rc = rc_end + (S[outer] - S_end)
            h = coef * rc ** (-g)
            h1 = -g * coef * rc ** (-g - 1)
            h2 = g * (g + 1) * coef * rc ** (-g - 2)
            h3 = -g * (g + 1) * (g + 2) * coef * rc ** (-g - 3)
            e, nrm = cone.ray, cone.ray_normal
            u[outer] = rc * e[0] + h * nrm[0]
            v[outer] = rc * e[1] + h * nrm[1]
            th[outer] = cone.alpha + np.arctan(h1)
            dth[outer] = h2 / (1.0 + h1 ** 2) ** 1.5
            d2th[outer] = h3 / (1.0 + h1 ** 2) ** 2

        u, v, th = self.scale * u, self.scale * v, th
        dth, d2th = dth / self.scale, d2th / self.scale ** 2
        if self.reflected:
            u, v = v, u
            th = math.pi / 2.0 - th
            dth, d2th = -dth, -d2th
        return {"u": u, "v": v, "theta": th, "dtheta": dth, "d2theta": d2th}

    def arclength_at_radius(self, r) -> np.ndarray:
        """Arclength at which the profile reaches distance r from the origin."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.side == "cone":
            return r.copy()
        rad = self.radius
        s = np.interp(r, rad, self.s)
        beyond = r > rad[-1]
        # Far field: the leaf is asymptotically a unit-speed ray
        s[beyond] = self.s[-1] + (r[beyond] - rad[-1])
        return s

    def to_dict(self) -> Dict[str, Any]:
        return {"p": self.cone.p, "q": self.cone.q, "gamma": self.cone.gamma,
                "side": self.side, "asymptotic_coef": self.asymptotic_coef,
                "remainder_exp": self.remainder_exp, "normalized": self.normalized}


def _scaled(leaf: LeafProfile, factor: float) -> LeafProfile:
    samples = leaf.samples.copy()
    samples[:, :3] *= factor
    coef = leaf.asymptotic_coef * factor ** (leaf.cone.gamma + 1)
    return replace(leaf, samples=samples, scale=leaf.scale * factor, asymptotic_coef=coef)


def reflect_leaf(leaf: LeafProfile) -> LeafProfile:
    """Mirror a leaf across the diagonal; exact when p = q."""
    samples = leaf.samples[:, [0, 2, 1, 3]].copy()
    samples[:, 3] = math.pi / 2.0 - samples[:, 3]
    side = "minus" if leaf.side == "plus" else "plus"
    return replace(leaf, side=side, samples=samples, asymptotic_coef=-leaf.asymptotic_coef,
                   reflected=not leaf.reflected)


def _fit_asymptotics(cone: QuadraticCone, u: np.ndarray, v: np.ndarray) -> Tuple[float, float, float]:
    """Fit distance-to-cone ~ coef r^-gamma on the last decade of radii."""
    alpha, g = cone.alpha, cone.gamma
    d = v * math.cos(alpha) - u * math.sin(alpha)
    rc = u * math.cos(alpha) + v * math.sin(alpha)
    window = rc >= rc[-1] / 10.0
    slope = np.polyfit(np.log(rc[window]), np.log(np.abs(d[window])), 1)[0]
    basis = rc[window] ** (-g)
    coef = float(np.sum(d[window] * basis) / np.sum(basis * basis))

    tail = (rc >= 10.0 * rc[0]) & (rc <= rc[-1] / 10.0)
    remainder_exp = math.nan
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.abs(d[tail] - coef * rc[tail] ** (-g))
        good = resid > 0
        if np.count_nonzero(good) > 10:
            rslope = np.polyfit(np.log(rc[tail][good]), np.log(resid[good]), 1)[0]
            remainder_exp = float(-rslope - g)
    return float(slope), coef, remainder_exp


def solve_leaf(cone: QuadraticCone, side: str, s_max: float = LEAF_S_MAX,
               rtol: float = LEAF_RTOL, atol: float = LEAF_ATOL,
               normalize: bool = True) -> LeafProfile:
    """
    Shoot the minimal leaf H_plus (from the v axis) or H_minus (from the u axis).

    Args:
        cone: The quadratic cone
        side: "plus" or "minus"
        s_max: Raw arclength to integrate to (axis radius 1)
        rtol: Relative tolerance of the embedded RK45 pair
        atol: Absolute tolerance
        normalize: Rescale so the r^-gamma coefficient is +-1

    Returns:
        LeafProfile
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side}")
    p, q = cone.p, cone.q
    r0 = 1.0
    S0 = LEAF_LAUNCH * r0
    if side == "plus":
        k = q / ((p + 1) * r0)
        y0 = [S0 - k * k * S0 ** 3 / 6.0, r0 + k * S0 ** 2 / 2.0, k * S0]
    else:
        k = -p / ((q + 1) * r0)
        y0 = [r0 - k * S0 ** 2 / 2.0, S0 - k * k * S0 ** 3 / 6.0, math.pi / 2.0 + k * S0]

    def leave_u(s, y, p, q):
        return y[0]

    def leave_v(s, y, p, q):
        return y[1]

    leave_u.terminal = leave_v.terminal = True
    leave_u.direction = leave_v.direction = -1

    sol = solve_ivp(profile_rhs, (S0, s_max), y0, method="RK45", rtol=rtol, atol=atol,
                    dense_output=True, events=[leave_u, leave_v], args=(p, q))
    if sol.status == 1:
        raise BlowUp(f"{side} leaf left the quadrant at s={sol.t[-1]:.4g}")
    if sol.status != 0:
        raise NoConvergence(f"{side} leaf integration failed: {sol.message}")

    theta_end = sol.y[2, -1]
    if abs(theta_end - cone.alpha) > 1e-2:
        raise NoConvergence(
            f"{side} leaf tangent {theta_end:.6f} did not approach the cone angle {cone.alpha:.6f}"
        )
    r_end = math.hypot(sol.y[0, -1], sol.y[1, -1])
    if r_end / r0 < LEAF_RADIUS_RATIO:
        console.print(f"[yellow]Warning: {side} leaf only reached r/r0 = {r_end / r0:.3g}; "
                      f"increase s_max[/yellow]")

    s_grid = np.concatenate([[0.0], np.geomspace(S0, s_max, LEAF_SAMPLES - 1)])
    tmp = LeafProfile(side=side, samples=np.zeros((1, 4)), asymptotic_coef=0.0,
                      remainder_exp=math.nan, normalized=False, cone=cone,
                      _dense=sol.sol, _launch=(S0, r0, k), _raw_end=(s_max, math.inf, 0.0))
    st = tmp.state(s_grid)
    samples = np.column_stack([s_grid, st["u"], st["v"], st["theta"]])

    slope, coef, remainder_exp = _fit_asymptotics(cone, st["u"], st["v"])
    rc_end = st["u"][-1] * math.cos(cone.alpha) + st["v"][-1] * math.sin(cone.alpha)
    leaf = replace(tmp, samples=samples, asymptotic_coef=coef, remainder_exp=remainder_exp,
                   _raw_end=(s_max, rc_end, coef))
    console.print(f"  [green]✓[/green] {side} leaf: decay exponent {slope:.4f} "
                  f"(expected {-cone.gamma:.4f}), coefficient {coef:.6g}")

    if normalize:
        factor = abs(coef) ** (-1.0 / (cone.gamma + 1))
        leaf = _scaled(leaf, factor)
        leaf = replace(leaf, asymptotic_coef=math.copysign(1.0, coef), normalized=True)
    return leaf


def fitted_decay_exponent(leaf: LeafProfile) -> float:
    """Log-log slope of the distance to the cone over the last decade."""
    return _fit_asymptotics(leaf.cone, leaf.u, leaf.v)[0]


def fitted_coefficient(leaf: LeafProfile) -> float:
    return _fit_asymptotics(leaf.cone, leaf.u, leaf.v)[1]


def profile_residual(leaf: LeafProfile) -> float:
    """Max of |theta' + p sin/u - q cos/v| * r over interior samples (dimensionless)."""
    cone = leaf.cone
    s, u, v, th = leaf.s[1:], leaf.u[1:], leaf.v[1:], leaf.theta[1:]
    dth = np.gradient(th, s)
    res = np.abs(dth + cone.p * np.sin(th) / u - cone.q * np.cos(th) / v)
    return float(np.max((res * np.hypot(u, v))[2:-2]))


def cone_residual(cone: QuadraticCone, radii) -> float:
    """Right side of the profile ODE on the cone ray itself."""
    r = np.asarray(radii, dtype=float)
    u, v = r * math.cos(cone.alpha), r * math.sin(cone.alpha)
    rhs = -cone.p * math.sin(cone.alpha) / u + cone.q * math.cos(cone.alpha) / v
    return float(np.max(np.abs(rhs * r)))


def graph_decay_exponents(leaf: LeafProfile) -> List[float]:
    """
    Fitted decay exponents of the leaf-over-cone graph function and its
    first two derivatives on the far end of the profile.
    """
    cone = leaf.cone
    stride = max(1, len(leaf.s) // 200)
    u, v = leaf.u[::stride], leaf.v[::stride]
    d = v * math.cos(cone.alpha) - u * math.sin(cone.alpha)
    rc = u * math.cos(cone.alpha) + v * math.sin(cone.alpha)
    window = rc >= rc[-1] / 30.0
    derivs = [d]
    derivs.append(np.gradient(derivs[-1], rc))
    derivs.append(np.gradient(derivs[-1], rc))
    exps = []
    for f in derivs:
        sel = window.copy()
        sel[:1] = sel[-1:] = False
        exps.append(float(np.polyfit(np.log(rc[sel]), np.log(np.abs(f[sel])), 1)[0]))
    return exps


@dataclass(frozen=True)
class FoliationTable:
    """H(t) = |t|^(1/(gamma+1)) H_+- with polar radius tables g_+-."""
    cone: QuadraticCone
    leaf_plus: LeafProfile
    leaf_minus: LeafProfile
    polar_radius: Dict[str, Any] = field(repr=False, default_factory=dict)

    def leaf(self, side: str) -> LeafProfile:
        return self.leaf_plus if side == "plus" else self.leaf_minus


def cone_offset(cone: QuadraticCone, u, v) -> np.ndarray:
    """
    Signed distance v cos(alpha) - u sin(alpha) to the cone ray; values at the
    rounding level of the radius are set to zero.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = v * math.cos(cone.alpha) - u * math.sin(cone.alpha)
    return np.where(np.abs(d) <= 8.0 * np.finfo(float).eps * np.hypot(u, v), 0.0, d)


def _far_field(leaf: LeafProfile) -> Tuple[np.ndarray, np.ndarray]:
    """
    (x, ln rho) beyond the last leaf sample, from the two-term far field
    h = c1 r^-gamma + c2 r^-(n-3-gamma) of the leaf as a graph over the cone.

    Stops at the first point with sin|phi - alpha| below POLAR_TABLE_FLOOR.
    """
    cone = leaf.cone
    g, g2 = cone.gamma, cone.n - 3 - cone.gamma
    d = leaf.v * math.cos(cone.alpha) - leaf.u * math.sin(cone.alpha)
    rc = leaf.u * math.cos(cone.alpha) + leaf.v * math.sin(cone.alpha)
    window = rc >= rc[-1] / 10.0
    basis = np.column_stack([rc[window] ** (-g), rc[window] ** (-g2)])
    (c1, c2), *_ = np.linalg.lstsq(basis, d[window], rcond=None)

    r_far = 2.0 * (abs(c1) / POLAR_TABLE_FLOOR) ** (1.0 / (g + 1.0))
    if r_far <= 1.5 * rc[-1]:
        return np.empty(0), np.empty(0)
    r = np.geomspace(1.5 * rc[-1], r_far, POLAR_EXTENSION_SAMPLES)
    h = np.abs(c1 * r ** (-g) + c2 * r ** (-g2))
    rho = np.hypot(r, h)
    x = np.log(h / rho)
    x_end = math.log(abs(d[-1]) / math.hypot(leaf.u[-1], leaf.v[-1]))
    keep = x < x_end
    below = np.nonzero(x < math.log(POLAR_TABLE_FLOOR))[0]
    if len(below):
        keep[below[0] + 1:] = False
    return x[keep], np.log(rho[keep])


def _polar_table(leaf: LeafProfile) -> Dict[str, Any]:
    """
    Tabulate ln g(x), x = ln sin|phi - alpha|, on Chebyshev-spaced nodes.

    The leaf samples are continued by their far field so the table reaches
    down to x = ln POLAR_TABLE_FLOOR.
    """
    cone = leaf.cone
    u, v = leaf.u, leaf.v
    rho = np.hypot(u, v)
    d = np.abs(v * math.cos(cone.alpha) - u * math.sin(cone.alpha))
    x_far, lnrho_far = _far_field(leaf)
    x = np.concatenate([np.log(d / rho), x_far])
    lnrho = np.concatenate([np.log(rho), lnrho_far])
    if not (np.all(np.diff(x) < 0) and np.all(np.diff(lnrho[1:]) > 0)):
        raise NoConvergence(f"{leaf.side} leaf is not a monotone polar graph over the cone angle")

    x_asc, lnrho_asc = x[::-1], lnrho[::-1]
    raw = PchipInterpolator(x_asc, lnrho_asc)
    lo, hi = float(x_asc[0]), float(x_asc[-1])
    k = np.arange(POLAR_TABLE_SIZE)
    nodes = 0.5 * (lo + hi) - 0.5 * (hi - lo) * np.cos(np.pi * k / (POLAR_TABLE_SIZE - 1))
    return {"interp": PchipInterpolator(nodes, raw(nodes)), "x_min": lo, "x_max": hi}


def build_foliation(cone: QuadraticCone, s_max: float = LEAF_S_MAX) -> FoliationTable:
    """Solve both leaves and tabulate their polar radii."""
    plus = solve_leaf(cone, "plus", s_max=s_max)
    minus = reflect_leaf(plus) if cone.p == cone.q else solve_leaf(cone, "minus", s_max=s_max)
    tables = {"plus": _polar_table(plus), "minus": _polar_table(minus)}
    return FoliationTable(cone=cone, leaf_plus=plus, leaf_minus=minus, polar_radius=tables)


def polar_radius(table: FoliationTable, side: str, x) -> np.ndarray:
    """
    g_+-(phi) as a function of x = ln sin|phi - alpha|.

    Raises:
        OutOfTable: x beyond the axis crossing or closer to the cone than the table floor
    """
    tab = table.polar_radius[side]
    x = np.asarray(x, dtype=float)
    if np.any(x > tab["x_max"] + 1e-12):
        raise OutOfTable(f"polar angle beyond the {side} leaf's axis crossing")
    if np.any(x < tab["x_min"] - 1e-9):
        raise OutOfTable(f"sin|phi - alpha| = {math.exp(float(np.min(x))):.3g} is below the "
                         f"{side} table floor {math.exp(tab['x_min']):.3g}")
    return np.exp(tab["interp"](np.clip(x, tab["x_min"], tab["x_max"])))


def leaf_H(table: FoliationTable, t: float) -> LeafProfile:
    """The leaf H(t): the cone ray for t = 0, |t|^(1/(gamma+1)) H_+- otherwise."""
    cone = table.cone
    if t == 0:
        base = table.leaf_plus
        s = base.s.copy()
        samples = np.column_stack([s, s * math.cos(cone.alpha), s * math.sin(cone.alpha),
                                   np.full_like(s, cone.alpha)])
        return LeafProfile(side="cone", samples=samples, asymptotic_coef=0.0,
                           remainder_exp=math.nan, normalized=True, cone=cone)
    side = "plus" if t > 0 else "minus"
    return _scaled(table.leaf(side), abs(t) ** (1.0 / (cone.gamma + 1)))


def leaf_parameter(table: FoliationTable, u, v, floor_bound: bool = False):
    """
    The unique t with (u, v) on H(t).

    Args:
        table: Foliation table
        u, v: Orbit radii (scalars or arrays); y plays no role
        floor_bound: Give points closer to the cone than the table floor the
            parameter at the floor angle, an upper bound for |t|, instead of raising

    Returns:
        t with the shape of the input; points within rounding of the cone get t = 0

    Raises:
        OutOfTable: outside the quadrant, or off the cone by less than the table resolves
    """
    cone = table.cone
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    if np.any(u_arr < 0) or np.any(v_arr < 0):
        raise OutOfTable("point outside the (u, v) quadrant")
    rho = np.hypot(u_arr, v_arr)
    if np.any(rho == 0):
        raise ValueError("leaf parameter undefined at the origin")
    d = cone_offset(cone, u_arr, v_arr)
    t = np.zeros_like(rho)
    for side, mask in (("plus", d > 0), ("minus", d < 0)):
        if np.any(mask):
            x = np.log(np.abs(d[mask]) / rho[mask])
            if floor_bound:
                x = np.maximum(x, table.polar_radius[side]["x_min"])
            sigma = rho[mask] / polar_radius(table, side, x)
            sign = 1.0 if side == "plus" else -1.0
            t[mask] = sign * sigma ** (cone.gamma + 1)
    return float(t) if t.ndim == 0 else t


def separation_constant(table: FoliationTable, t: float, lam: float,
                        sample_radii) -> float:
    """
    Largest c0 with offset(H(t), H(t+lam)) >= c0 min(lam r^-gamma, r) at the sampled radii.

    Offsets are measured along the normal of H(t).
    """
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    cone = table.cone
    leaf = leaf_H(table, t)
    radii = np.asarray(sample_radii, dtype=float)
    st = leaf.state(leaf.arclength_at_radius(radii))
    ratios = []
    for i, r in enumerate(radii):
        P = np.array([st["u"][i], st["v"][i]])
        th = st["theta"][i]
        N = np.array([-math.sin(th), math.cos(th)])

        def excess(w):
            X = np.maximum(P + w * N, 0.0)
            return leaf_parameter(table, X[0], X[1]) - (t + lam)

        hi = 1e-3 * r
        for _ in range(60):
            if excess(hi) > 0:
                break
            hi *= 2.0
        else:
            raise NoConvergence(f"no bracket for the leaf offset at r={r:.4g}")
        w = brentq(excess, 0.0, hi, xtol=1e-14 * r, rtol=1e-12)
        ratios.append(w / min(lam * r ** (-cone.gamma), r))
    return float(min(ratios))


@dataclass(frozen=True)
class BarrierFunction:
    """F_{+-,a} sampled along a leaf with its sign certificate."""
    a: float
    side: str
    variant: str  # "subsolution" or "supersolution"
    values: np.ndarray
    sign_certificate: float
    sigma: float  # smoothing radius of (r^2 + sigma^2)^(a/2), nan for the BVP fallback
    method: str
    matching_radius: float
    worst_index: int


def _leaf_operator(leaf: LeafProfile):
    """Coefficients of L_H f = f'' + P f' + |A|^2 f on the samples (axis excluded)."""
    cone = leaf.cone
    s, u, v, th = leaf.s[1:], leaf.u[1:], leaf.v[1:], leaf.theta[1:]
    dth = -cone.p * np.sin(th) / u + cone.q * np.cos(th) / v
    drift = cone.p * np.cos(th) / u + cone.q * np.sin(th) / v
    a2 = dth ** 2 + cone.p * (np.sin(th) / u) ** 2 + cone.q * (np.cos(th) / v) ** 2
    return s, u, v, th, dth, drift, a2


def barrier_operator(leaf: LeafProfile, a: float, sigma: float):
    """(r^2 + sigma^2)^(a/2) and L_H of it on the samples, axis excluded."""
    s, u, v, th, dth, drift, a2 = _leaf_operator(leaf)
    rho2 = u * u + v * v
    w = rho2 + sigma * sigma
    w1 = 2.0 * (u * np.cos(th) + v * np.sin(th))
    w2 = 2.0 + 2.0 * dth * (v * np.cos(th) - u * np.sin(th))
    F = w ** (a / 2.0)
    F1 = 0.5 * a * w ** (a / 2.0 - 1.0) * w1
    F2 = 0.5 * a * (0.5 * a - 1.0) * w ** (a / 2.0 - 2.0) * w1 ** 2 + 0.5 * a * w ** (a / 2.0 - 1.0) * w2
    LF = F2 + drift * F1 + a2 * F
    return F, LF, rho2


def _closed_form_certificate(leaf: LeafProfile, a: float, sigma: float, sign: float):
    F, LF, rho2 = barrier_operator(leaf, a, sigma)
    return F, sign * LF / rho2 ** ((a - 2.0) / 2.0)


def _matching_radius(leaf: LeafProfile, F: np.ndarray, a: float) -> float:
    rho = leaf.radius[1:]
    off = np.abs(F / rho ** a - 1.0) >= BARRIER_MATCH_TOL
    if not np.any(off):
        return float(rho[0])
    last = int(np.nonzero(off)[0][-1])
    return float(rho[min(last + 1, len(rho) - 1)])


def _bvp_barrier(leaf: LeafProfile, a: float, sign: float):
    """Solve L_H F = sign (1 + r^2)^((a-2)/2) with F' = 0 at the axis and F = r^a far out."""
    s, u, v, th, dth, drift, a2 = _leaf_operator(leaf)
    rho = np.hypot(u, v)
    mesh = np.geomspace(s[0], s[-1], 400)

    def coeffs(x):
        return (np.interp(x, s, drift), np.interp(x, s, a2), np.interp(x, s, rho))

    def fun(x, y):
        P, A2, r = coeffs(x)
        rhs = sign * (1.0 + r * r) ** ((a - 2.0) / 2.0)
        return np.vstack([y[1], rhs - P * y[1] - A2 * y[0]])

    def bc(ya, yb):
        return np.array([ya[1], yb[0] - rho[-1] ** a])

    r_mesh = np.interp(mesh, s, rho)
    guess = np.vstack([r_mesh ** a, a * r_mesh ** (a - 1.0)])
    sol = solve_bvp(fun, bc, mesh, guess, tol=1e-6, max_nodes=100000)
    if not sol.success:
        return None
    y = sol.sol(s)
    P, A2, r = drift, a2, rho
    F, F1 = y[0], y[1]
    F2 = fun(s, y)[1]
    LF = F2 + P * F1 + A2 * F
    cert = sign * LF / rho ** (a - 2.0)
    return F, cert


def build_Fa(cone: QuadraticCone, leaf: LeafProfile, a: float,
             variant: str = "subsolution") -> BarrierFunction:
    """
    Build F_{+-,a} on a leaf with a pointwise sign certificate for L_H F.

    The candidate (r^2 + sigma^2)^(a/2) is tried first, with sigma found by
    log-bisection; a boundary value solve is the fallback.

    Args:
        cone: The quadratic cone
        leaf: Normalized leaf profile
        a: Homogeneity degree
        variant: "subsolution" (a > -gamma) or "supersolution" (3-n+gamma < a < -gamma)

    Returns:
        BarrierFunction
    """
    g = cone.gamma
    if variant == "subsolution":
        if a <= -g:
            raise ValueError(f"subsolution barriers need a > -gamma = {-g}")
        sign = 1.0
    elif variant == "supersolution":
        if not 3 - cone.n + g < a < -g:
            raise ValueError(f"supersolution barriers need a in ({3 - cone.n + g}, {-g})")
        sign = -1.0
    else:
        raise ValueError(f"unknown variant: {variant}")

    r0 = leaf.axis_radius
    lo, hi = math.log(BARRIER_SIGMA_RANGE[0] * r0), math.log(BARRIER_SIGMA_RANGE[1] * r0)

    def cert_min(log_sigma):
        return float(np.min(_closed_form_certificate(leaf, a, math.exp(log_sigma), sign)[1]))

    chosen = None
    if cert_min(hi) > 0:
        if cert_min(lo) > 0:
            chosen = lo
        else:
            a_log, b_log = lo, hi
            for _ in range(BARRIER_BISECTION_ITERS):
                mid = 0.5 * (a_log + b_log)
                if cert_min(mid) > 0:
                    b_log = mid
                else:
                    a_log = mid
            chosen = b_log
    else:
        for log_sigma in np.linspace(lo, hi, 61):
            if cert_min(log_sigma) > 0:
                chosen = float(log_sigma)
                break

    if chosen is not None:
        sigma = math.exp(chosen)
        F, cert = _closed_form_certificate(leaf, a, sigma, sign)
        method = "closed_form"
    else:
        console.print(f"  [yellow]Warning: closed-form F_a failed for a={a:.4g}; "
                      f"solving the boundary value problem[/yellow]")
        sigma = math.nan
        result = _bvp_barrier(leaf, a, sign)
        if result is None:
            raise NoBarrier(f"no {variant} barrier for a={a:.4g}: boundary value solve failed")
        F, cert = result
        method = "bvp"

    worst = int(np.argmin(cert))
    if cert[worst] <= 0:
        raise NoBarrier(f"no {variant} barrier for a={a:.4g}: certificate {cert[worst]:.3e} "
                        f"at r={leaf.radius[1 + worst]:.4g}")
    return BarrierFunction(a=a, side=leaf.side, variant=variant, values=F,
                           sign_certificate=float(cert[worst]), sigma=sigma, method=method,
                           matching_radius=_matching_radius(leaf, F, a), worst_index=worst)


def evaluate_Fa(table: FoliationTable, barriers: Dict[str, BarrierFunction], u, v) -> np.ndarray:
    """
    Homogeneous degree-a extension of F_{+-,a} to every leaf of the foliation.

    Args:
        table: Foliation table
        barriers: Closed-form barriers keyed by side
        u, v: Points in the quadrant

    Returns:
        F_a(u, v)
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    t = np.asarray(leaf_parameter(table, u, v))
    scale = np.abs(t) ** (1.0 / (table.cone.gamma + 1))
    sigma = np.zeros_like(scale)
    a = None
    for side, mask in (("plus", t > 0), ("minus", t < 0)):
        barrier = barriers[side]
        if barrier.method != "closed_form":
            raise ValueError("homogeneous extension needs the closed-form barrier")
        a = barrier.a
        sigma = np.where(mask, barrier.sigma, sigma)
    if a is None:
        a = next(iter(barriers.values())).a
    return (u * u + v * v + (scale * sigma) ** 2) ** (a / 2.0)


def cone_operator_coefficient(cone: QuadraticCone, a: float, radius: float = 1.0,
                              h: float = 1e-4) -> Tuple[float, float]:
    """
    c_a from the closed form and from finite differences of L_C(r^a) on the ray.

    Returns:
        (closed form, finite-difference estimate)
    """
    r = radius
    f = lambda x: x ** a
    f1 = (f(r + h) - f(r - h)) / (2 * h)
    f2 = (f(r + h) - 2 * f(r) + f(r - h)) / h ** 2
    Lf = f2 + (cone.n - 2) / r * f1 + cone.secfund_sq / r ** 2 * f(r)
    return cone.c_coefficient(a), Lf / r ** (a - 2)
