"""Distances to C x R and to T_lambda, doubling sequences, barriers and blowup degrees."""
import math
from dataclasses import dataclass, field, replace
from typing import List, Dict, Any, Optional, Tuple, Callable, Sequence

import numpy as np
from scipy.special import beta as beta_fn
from rich.console import Console

from .config import (
    Q_REG, BETA_PARAM, P_BARRIER, Q_BARRIER, BARRIER_RESOLVED_OFFSET, MIN_BALL_SAMPLES, MASS_RATIO,
)
from .cone_spectra import QuadraticCone
from .foliation import (
    FoliationTable, leaf_H, leaf_parameter, build_Fa, barrier_operator, cone_offset,
)
from .glue_solver import EquivariantSurface, mean_curvature, offset_leaf_surface, scale_T
from .jacobi_fields import JacobiFieldExpansion, evaluate_field
from .errors import (
    ResolutionExceeded, NotGraphical, NoSignal, NegativityFail, SandwichFail, MassBoundFail,
)

console = Console()

SOURCES = ("exact-surface", "synthetic-graph", "perturbed")


@dataclass(frozen=True)
class Region:
    """Closed query region; points on the boundary count as inside."""
    rho_max: float = math.inf
    rho_min: float = 0.0
    r_min: float = 0.0
    y_abs_max: float = math.inf

    def contains(self, points: np.ndarray) -> np.ndarray:
        r = np.hypot(points[:, 0], points[:, 1])
        rho = np.sqrt(r * r + points[:, 2] ** 2)
        return ((rho <= self.rho_max) & (rho >= self.rho_min) & (r >= self.r_min)
                & (np.abs(points[:, 2]) <= self.y_abs_max))


@dataclass
class SampledVarifold:
    """
    Weighted samples (u, v, y) of an invariant hypersurface.

    Weights carry the area element times u^p v^q, so they scale like length^n.
    """
    cone: QuadraticCone
    points: np.ndarray
    weights: np.ndarray
    source: str = "exact-surface"
    rho_max: float = 1.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if len(self.points) != len(self.weights):
            raise ValueError(f"{len(self.points)} points but {len(self.weights)} weights")
        if np.any(self.weights <= 0):
            raise ValueError("sample weights must be positive")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source: {self.source}")

    @property
    def r(self) -> np.ndarray:
        return np.hypot(self.points[:, 0], self.points[:, 1])

    @property
    def rho(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def __len__(self) -> int:
        return len(self.weights)

    def scaled(self, lam: float) -> "SampledVarifold":
        """lam M."""
        if lam <= 0:
            raise ValueError(f"scale must be positive, got {lam}")
        return replace(self, points=self.points * lam, weights=self.weights * lam ** self.cone.n,
                       rho_max=self.rho_max * lam)

    def restrict(self, region: Region) -> "SampledVarifold":
        mask = region.contains(self.points)
        return replace(self, points=self.points[mask], weights=self.weights[mask])

    def mass(self, radius: float) -> float:
        return float(np.sum(self.weights[self.rho <= radius]))

    def to_rows(self) -> List[Tuple[float, float, float, float]]:
        """CSV rows (u, v, y, weight)."""
        return [(float(u), float(v), float(y), float(w))
                for (u, v, y), w in zip(self.points, self.weights)]


@dataclass
class DoublingReport:
    lam: float
    ds: List[float]
    flags: List[bool]
    doubling_constant: float
    degree_fit: float
    q_reg: float

    @property
    def rows(self) -> List[Tuple[int, float, float, bool]]:
        """(k, rho, d, flag); the last k has no successor and is flagged True."""
        return [(k, math.exp(-k * self.lam), d, self.flags[k] if k < len(self.flags) else True)
                for k, d in enumerate(self.ds)]

    def to_dict(self) -> Dict[str, Any]:
        return {"lambda": self.lam, "ds": self.ds, "flags": self.flags,
                "doubling_constant": self.doubling_constant, "degree_fit": self.degree_fit,
                "q_reg": self.q_reg}


@dataclass
class BarrierSurfaceX:
    """
    Slicewise barrier over the leaves H(eps f(y)^p_barrier).

    When `sampled` is set the certificates come from mean_curvature on the
    framed surface X_eps and `surface` is that surface; otherwise eps is too
    small for the offsets to show in positions and they come from the
    linearization about H(t) x R. The linearized maximum is kept either way.
    """
    eps: float
    f_values: np.ndarray
    heights: np.ndarray
    K: float
    p_barrier: int
    Q: float
    surface: EquivariantSurface
    negativity_certificate: float
    sandwich_max: float  # max |leaf parameter shift| / eps
    tested_nodes: int
    barriers: Dict[str, Any] = field(default_factory=dict)
    linearized_certificate: float = math.nan
    sampled: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"eps": self.eps, "K": self.K, "Q": self.Q, "p_barrier": self.p_barrier,
                "f": self.f_values.tolist(), "heights": self.heights.tolist(),
                "negativity_certificate": self.negativity_certificate,
                "linearized_certificate": self.linearized_certificate, "sampled": self.sampled,
                "sandwich_max": self.sandwich_max, "tested_nodes": self.tested_nodes,
                "barriers": self.barriers}


@dataclass
class NonconcentrationReport:
    lhs: float
    total: float
    rows: List[Tuple[float, float, float]]  # (A, D(r >= b s^A, |y| < b), rhs)
    fitted_A: float
    b: float
    s: float


@dataclass
class DT3AnnulusReport:
    """Distances D_k = D_{L^k T}(L^k M) for k = -2..2 and the two implications."""
    L: float
    d: float
    alpha: float
    distances: Dict[int, float]
    hypothesis_i: bool
    conclusion_i: bool
    hypothesis_ii: bool
    conclusion_ii: bool
    mass_ratio: float

    @property
    def implication_i(self) -> bool:
        return (not self.hypothesis_i) or self.conclusion_i

    @property
    def implication_ii(self) -> bool:
        return (not self.hypothesis_ii) or self.conclusion_ii

    def to_dict(self) -> Dict[str, Any]:
        return {"L": self.L, "d": self.d, "alpha": self.alpha,
                "distances": {str(k): v for k, v in self.distances.items()},
                "hypothesis_i": self.hypothesis_i, "conclusion_i": self.conclusion_i,
                "implication_i": self.implication_i, "hypothesis_ii": self.hypothesis_ii,
                "conclusion_ii": self.conclusion_ii, "implication_ii": self.implication_ii,
                "mass_ratio": self.mass_ratio}


# ---------------------------------------------------------------------------
# Synthetic varifolds
# ---------------------------------------------------------------------------

def _polar_grid(rho_max: float, n_rho: int, n_phi: int):
    """Midpoint grid on the half disc (r > 0) of radius rho_max in the (r, y) plane."""
    drho = rho_max / n_rho
    dphi = math.pi / n_phi
    rho = (np.arange(n_rho) + 0.5) * drho
    phi = -0.5 * math.pi + (np.arange(n_phi) + 0.5) * dphi
    R, PHI = np.meshgrid(rho, phi, indexing="ij")
    return R.ravel(), PHI.ravel(), drho * dphi


def cone_samples(cone: QuadraticCone, rho_max: float = 1.0, n_rho: int = 64,
                 n_phi: int = 64) -> SampledVarifold:
    """C x R sampled on a polar grid of its (r, y) half plane."""
    rho, phi, cell = _polar_grid(rho_max, n_rho, n_phi)
    r, y = rho * np.cos(phi), rho * np.sin(phi)
    u, v = r * math.cos(cone.alpha), r * math.sin(cone.alpha)
    weights = rho * cell * u ** cone.p * v ** cone.q
    return SampledVarifold(cone=cone, points=np.column_stack([u, v, y]), weights=weights,
                           source="exact-surface", rho_max=rho_max)


def graph_samples(cone: QuadraticCone, fn: Callable, rho_max: float = 1.0, n_rho: int = 64,
                  n_phi: int = 64, r_min: float = 0.0,
                  source: str = "synthetic-graph") -> SampledVarifold:
    """
    The normal graph of fn(r, y) over C x R.

    Args:
        cone: The quadratic cone
        fn: Vectorized height over the cone ray in the direction of ray_normal
        rho_max: Radius of the sampled half disc
        n_rho, n_phi: Polar grid size
        r_min: Grid points with r < r_min are dropped, for fields singular on the axis
        source: Sample tag

    Raises:
        NotGraphical: if a displaced sample leaves the (u, v) quadrant
    """
    rho, phi, cell = _polar_grid(rho_max, n_rho, n_phi)
    r, y = rho * np.cos(phi), rho * np.sin(phi)
    keep = r >= r_min
    rho, r, y = rho[keep], r[keep], y[keep]
    h = np.asarray(fn(r, y), dtype=float)
    step = 1e-6 * rho
    h_r = (np.asarray(fn(r + step, y)) - np.asarray(fn(r - step, y))) / (2 * step)
    h_y = (np.asarray(fn(r, y + step)) - np.asarray(fn(r, y - step))) / (2 * step)
    e, nc = cone.ray, cone.ray_normal
    u = r * e[0] + h * nc[0]
    v = r * e[1] + h * nc[1]
    if np.any(u <= 0) or np.any(v <= 0):
        raise NotGraphical("graph leaves the (u, v) quadrant; reduce the amplitude")
    area = np.sqrt(1.0 + h_r ** 2 + h_y ** 2) * rho * cell
    return SampledVarifold(cone=cone, points=np.column_stack([u, v, y]),
                           weights=area * u ** cone.p * v ** cone.q, source=source,
                           rho_max=rho_max)


def field_graph(field: JacobiFieldExpansion, amplitude: float) -> Callable:
    """Height function amplitude * u(r, y) for graph_samples."""
    return lambda r, y: amplitude * evaluate_field(field, r, y)["u"]


def leaf_samples(table: FoliationTable, t: float, rho_max: float = 1.0, n_s: int = 256,
                 n_y: int = 128) -> SampledVarifold:
    """H(t) x R cut to the ball of radius rho_max."""
    cone = table.cone
    leaf = leaf_H(table, t)
    s_end = float(leaf.arclength_at_radius(rho_max)[0])
    ds = s_end / n_s
    dy = 2.0 * rho_max / n_y
    s = (np.arange(n_s) + 0.5) * ds
    y = -rho_max + (np.arange(n_y) + 0.5) * dy
    st = leaf.state(s)
    U, Y = np.meshgrid(st["u"], y, indexing="ij")
    V, _ = np.meshgrid(st["v"], y, indexing="ij")
    pts = np.column_stack([U.ravel(), V.ravel(), Y.ravel()])
    weights = ds * dy * pts[:, 0] ** cone.p * pts[:, 1] ** cone.q
    keep = (np.linalg.norm(pts, axis=1) <= rho_max) & (weights > 0)
    return SampledVarifold(cone=cone, points=pts[keep], weights=weights[keep],
                           source="exact-surface", rho_max=rho_max)


def surface_samples(surface: EquivariantSurface, source: str = "exact-surface") -> SampledVarifold:
    """Grid nodes of a surface weighted by |X_i x X_j| u^p v^q; axis nodes are dropped."""
    cone = surface.cone
    X = surface.positions
    Xi = np.gradient(X, axis=0)
    Xj = np.gradient(X, axis=1)
    area = np.linalg.norm(np.cross(Xi, Xj), axis=-1)
    pts = X.reshape(-1, 3)
    u, v = np.maximum(pts[:, 0], 0.0), np.maximum(pts[:, 1], 0.0)
    weights = area.ravel() * u ** cone.p * v ** cone.q
    keep = weights > 0
    return SampledVarifold(cone=cone, points=pts[keep], weights=weights[keep], source=source,
                           rho_max=float(np.max(np.linalg.norm(pts, axis=1))))


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------

def dist_to_cone(M: SampledVarifold, table: FoliationTable, region: Optional[Region] = None) -> float:
    """
    D_{C x R}(M; U): the least eps with M in U between H(-eps) x R and H(eps) x R.

    Samples on the axis r = 0 lie on C x R and do not contribute.
    """
    pts = M.points if region is None else M.points[region.contains(M.points)]
    pts = pts[cone_offset(M.cone, pts[:, 0], pts[:, 1]) != 0]
    if len(pts) == 0:
        return 0.0
    t = np.atleast_1d(leaf_parameter(table, pts[:, 0], pts[:, 1], floor_bound=True))
    return float(np.max(np.abs(t)))


def l2_distance(M: SampledVarifold, rho: float) -> float:
    """(sum over B_rho of dist(x, C x R)^2 weight)^(1/2)."""
    mask = M.rho <= rho
    d = cone_offset(M.cone, M.points[mask, 0], M.points[mask, 1])
    return float(math.sqrt(np.sum(d * d * M.weights[mask])))


def d_regularized(M: SampledVarifold, table: FoliationTable, rho: float,
                  q_reg: float = Q_REG) -> float:
    """d(M, rho) = L2(rho^-1 M, 1) + D_{C x R}(rho^-1 M; B_1)^(1 + q^2)."""
    if not 0 < q_reg < 0.5:
        raise ValueError(f"q_reg must lie in (0, 1/2), got {q_reg}")
    Mr = M.scaled(1.0 / rho)
    D = dist_to_cone(Mr, table, Region(rho_max=1.0))
    return l2_distance(Mr, 1.0) + D ** (1.0 + q_reg * q_reg)


def quasi_monotonicity_constant(cone: QuadraticCone, a: float, q_reg: float = Q_REG) -> float:
    """C with d(M, a rho) <= C d(M, rho) for a in (0, 1]."""
    if not 0 < a <= 1:
        raise ValueError(f"a must lie in (0, 1], got {a}")
    return max(a ** (-1.0 - cone.n / 2.0), a ** (-(cone.gamma + 1.0) * (1.0 + q_reg * q_reg)))


def cone_mass(cone: QuadraticCone, radius: float) -> float:
    """Weighted area of C x R in the ball of the given radius, same measure as the samples."""
    B = float(beta_fn(0.5, (cone.n - 1) / 2.0))
    return (math.cos(cone.alpha) ** cone.p * math.sin(cone.alpha) ** cone.q
            * radius ** cone.n * B / cone.n)


def doubling_sequence(M: SampledVarifold, table: FoliationTable, lam: float, K: int,
                      q_reg: float = Q_REG) -> DoublingReport:
    """
    d(M, e^(-k lam)) for k = 0..K with the per-step property d_(k+1) >= d_k / 2.

    The doubling constant is the largest ratio d_k / d_(k+1); degree_fit is
    one plus the log-log slope of d against the radius, the homogeneity
    degree of a graph whose rescalings decay like d.

    Raises:
        ResolutionExceeded: if some ball holds fewer than MIN_BALL_SAMPLES samples
    """
    if lam <= 0 or K < 1:
        raise ValueError(f"need lam > 0 and K >= 1, got lam={lam}, K={K}")
    radii = np.exp(-lam * np.arange(K + 1))
    rho = M.rho
    for k, radius in enumerate(radii):
        count = int(np.count_nonzero(rho <= radius))
        if count < MIN_BALL_SAMPLES:
            raise ResolutionExceeded(f"ball of radius {radius:.4g} (k={k}) holds {count} samples; "
                                     f"need {MIN_BALL_SAMPLES}")

    ds = [d_regularized(M, table, float(radius), q_reg) for radius in radii]
    flags = [bool(ds[k] == 0 or ds[k + 1] >= 0.5 * ds[k]) for k in range(K)]
    ratios = [ds[k] / ds[k + 1] if ds[k + 1] > 0 else math.inf
              for k in range(K) if ds[k] > 0]
    constant = max(ratios) if ratios else 1.0

    positive = np.array(ds) > 0
    if np.count_nonzero(positive) >= 2:
        slope = float(np.polyfit(np.log(radii[positive]), np.log(np.array(ds)[positive]), 1)[0])
        degree_fit = 1.0 + slope
    else:
        degree_fit = math.nan
    return DoublingReport(lam=lam, ds=ds, flags=flags, doubling_constant=constant,
                          degree_fit=degree_fit, q_reg=q_reg)


def doubling_lower_bound_holds(report: DoublingReport, A: float) -> bool:
    """d(M, e^(-i lam)) >= A^-i d(M, 1) for every recorded i."""
    d0 = report.ds[0]
    return all(d >= A ** (-i) * d0 * (1.0 - 1e-12) for i, d in enumerate(report.ds))


# ---------------------------------------------------------------------------
# Barrier surfaces
# ---------------------------------------------------------------------------

def _leaf_frame(table: FoliationTable, side: str):
    leaf = table.leaf(side)
    P = np.column_stack([leaf.u[1:], leaf.v[1:]])
    th = leaf.theta[1:]
    N = np.column_stack([-np.sin(th), np.cos(th)])
    return leaf, P, N


def _sample_barrier(table: FoliationTable, leaf, f: Callable, eps: float, K: float, Q: float,
                    p_barrier: int, y: np.ndarray, F2: np.ndarray, F1: np.ndarray,
                    grid: Tuple[int, int]):
    """X_eps on a slice frame over uniform heights spanning y, its m and its leaf-parameter shifts."""
    g = table.cone.gamma
    lo, hi = float(np.min(y)), float(np.max(y))
    if not hi > lo:
        raise ValueError("sampling X_eps needs at least two distinct heights")
    Ny = grid[1]
    cut = K ** (-Q)
    s_leaf = leaf.s[1:]

    def height(j):
        return lo + (hi - lo) * j / (Ny - 1)

    def profile(j):
        yj = height(j)
        return np.broadcast_to(np.asarray(f(yj), dtype=float), np.shape(yj))

    def scale(j):
        return np.abs(eps * profile(j) ** p_barrier) ** (1.0 / (g + 1.0))

    def reach(j):
        return 2.0 * cut / scale(j)

    def offset(s, j):
        sg = scale(j)
        coef = K ** Q * eps * np.abs(profile(j)) ** (g * p_barrier / (g + 1.0))
        return -coef * sg ** (2.0 - g) * np.interp(s, s_leaf, F2) - eps * sg * np.interp(s, s_leaf, F1)

    surface = offset_leaf_surface(leaf, grid, height, scale, reach, offset)
    surface = replace(surface, t=eps * profile(np.arange(Ny, dtype=float)) ** p_barrier,
                      meta={"kind": "barrier", "eps": eps, "K": K, "Q": Q, "p_barrier": p_barrier,
                            "sampled": True})
    resolved = float(np.max(np.abs(surface.w) / surface.frame.sigma[None, :]))
    if resolved < BARRIER_RESOLVED_OFFSET:
        raise ValueError(f"offsets reach {resolved:.3g} of the leaf scale, below "
                         f"{BARRIER_RESOLVED_OFFSET:g}; raise eps to sample X_eps")
    curv = mean_curvature(surface)
    tested = curv.r < cut
    if not np.any(tested):
        raise ValueError(f"no sampled nodes below r = K^-Q = {cut:.3g}")
    X = surface.positions[1:-1, 1:-1]
    tq = leaf_parameter(table, X[..., 0], X[..., 1], floor_bound=True)
    shift = np.where(tested[1:], np.abs(tq - surface.t[None, 1:-1]) / eps, 0.0)
    return surface, curv, tested, float(np.max(shift))


def build_barrier_Xeps(table: FoliationTable, f: Callable, eps: float = 1e-30,
                       K: float = 9.0, Q: float = Q_BARRIER, p_barrier: int = P_BARRIER,
                       heights: Optional[np.ndarray] = None, max_nodes: int = 256,
                       sample_grid: Optional[Tuple[int, int]] = None) -> BarrierSurfaceX:
    """
    Slices X_eps(y) = graph of -K^Q eps |f|^(gamma p/(gamma+1)) F_(2-gamma) - eps F_1
    over the leaf H(eps f(y)^p).

    The linearization about H(t) x R is always evaluated: the leaf operator
    applied to the offset plus the y-derivative terms t'' nu_t + t'^2 nu_tt + w_yy,
    with nu_t the normal speed of the foliation. With sample_grid set, X_eps is
    also laid out on a slice frame and its mean curvature taken by
    mean_curvature; that value and the leaf parameters of the sampled nodes
    then give the certificates, and the linearized maximum stays as a
    cross-check. Certificates are checked on nodes with r < K^-Q.

    Args:
        table: Foliation table
        f: Vectorized profile f(y), nonzero on the sampled heights
        eps: Leaf parameter amplitude, eps < 1/Q
        K: Bound on the C^3 norm of f, K > Q
        Q: Exponent of the radius cut K^-Q
        p_barrier: Odd exponent
        heights: Sampled heights (default 9 points in [-1, 1])
        max_nodes: Cap on nodes kept per slice in the returned linearized surface
        sample_grid: (slice nodes, height nodes) of the sampled X_eps

    Raises:
        NegativityFail: m >= 0 at some tested node
        SandwichFail: a slice leaves the leaves H(eps f^p -+ eps)
        ValueError: bad parameters, or offsets too small to sample
    """
    cone = table.cone
    g = cone.gamma
    if p_barrier % 2 != 1 or p_barrier < 1:
        raise ValueError(f"p_barrier must be an odd positive integer, got {p_barrier}")
    if not 0 < eps < 1.0 / Q:
        raise ValueError(f"eps must lie in (0, 1/Q), got {eps}")
    if K <= Q:
        raise ValueError(f"K must exceed Q, got K={K}, Q={Q}")
    if sample_grid is not None and (sample_grid[0] < 4 or sample_grid[1] < 3):
        raise ValueError(f"sample_grid needs at least (4, 3) nodes, got {sample_grid}")
    y = np.linspace(-1.0, 1.0, 9) if heights is None else np.asarray(heights, dtype=float)
    fy = np.broadcast_to(np.asarray(f(y), dtype=float), y.shape).copy()
    if not (np.all(fy > 0) or np.all(fy < 0)):
        raise ValueError("f must keep one sign on the sampled heights")
    c3 = max(float(np.max(np.abs(d))) for d in _derivatives(fy, y, 3))
    if c3 > K:
        raise ValueError(f"C^3 norm of f is about {c3:.4g}, above K={K}")

    t = eps * fy ** p_barrier
    sigma = np.abs(t) ** (1.0 / (g + 1.0))
    coef = K ** Q * eps * np.abs(fy) ** (g * p_barrier / (g + 1.0))
    cut = K ** (-Q)

    side = "plus" if t[0] > 0 else "minus"
    leaf, P, N = _leaf_frame(table, side)
    ops, meta = {}, {}
    for a in (2.0 - g, 1.0):
        B = build_Fa(cone, leaf, a, "subsolution")
        if B.method == "closed_form":
            F, LF, _ = barrier_operator(leaf, a, B.sigma)
        else:
            F = B.values
            LF = _bvp_operator(leaf, F)
        ops[a] = (F, LF)
        meta[f"a={a:g}"] = {"side": side, "method": B.method, "sigma": B.sigma,
                            "sign_certificate": B.sign_certificate}

    F2, LF2 = ops[2.0 - g]
    F1, LF1 = ops[1.0]
    n_samples = len(P)
    W = np.zeros((n_samples, len(y)))
    M0 = np.zeros_like(W)
    XN = np.zeros_like(W)
    R = np.zeros_like(W)
    POS = np.zeros((n_samples, len(y), 3))
    for j in range(len(y)):
        s = sigma[j]
        W[:, j] = -coef[j] * s ** (2.0 - g) * F2 - eps * s * F1
        M0[:, j] = -coef[j] * s ** (-g) * LF2 - eps * LF1 / s
        XN[:, j] = s * np.sum(P * N, axis=1)
        R[:, j] = s * np.hypot(P[:, 0], P[:, 1])
        POS[:, j, :2] = s * P + W[:, j, None] * N
        POS[:, j, 2] = y[j]

    t_y, t_yy = _derivatives(t, y, 2)[1:]
    nu_t = XN / ((g + 1.0) * t[None, :])
    nu_tt = XN * (1.0 / (g + 1.0)) * (1.0 / (g + 1.0) - 1.0) / t[None, :] ** 2
    w_yy = _derivatives(W, y, 2, axis=1)[2]
    m = M0 + t_yy[None, :] * nu_t + t_y[None, :] ** 2 * nu_tt + w_yy

    tested = R < cut
    if not np.any(tested):
        raise ValueError(f"no nodes below r = K^-Q = {cut:.3g}; decrease eps or Q")
    worst = int(np.argmax(np.where(tested, m, -np.inf)))
    wi, wj = np.unravel_index(worst, m.shape)
    negativity = float(m[wi, wj])
    if negativity >= 0:
        raise NegativityFail(f"m = {negativity:.3e} >= 0 at r={R[wi, wj]:.3e}, y={y[wj]:.4g}")

    shift = np.abs(W * (g + 1.0) * t[None, :] / XN)
    shift = np.where(tested, shift, 0.0)
    sandwich = float(np.max(shift)) / eps
    if sandwich > 1.0:
        bad = int(np.argmax(np.max(shift, axis=0)))
        raise SandwichFail(f"slice {bad} (y={y[bad]:.4g}) shifts the leaf parameter by "
                           f"{sandwich:.3g} eps")

    if sample_grid is not None:
        sampled, curv, tested_s, sandwich_s = _sample_barrier(table, leaf, f, eps, K, Q, p_barrier,
                                                              y, F2, F1, sample_grid)
        values = np.where(tested_s, curv.values, -np.inf)
        si, sj = np.unravel_index(int(np.argmax(values)), values.shape)
        m_max = float(values[si, sj])
        if m_max >= 0:
            raise NegativityFail(f"sampled m = {m_max:.3e} >= 0 at r={curv.r[si, sj]:.3e}, "
                                 f"y={sampled.frame.y[sj + 1]:.4g}")
        if sandwich_s > 1.0:
            raise SandwichFail(f"sampled X_eps shifts the leaf parameter by {sandwich_s:.3g} eps")
        n_tested = int(np.count_nonzero(tested_s))
        console.print(f"  Barrier (sampled): max m = {m_max:.3e} on {n_tested} nodes, "
                      f"linearized {negativity:.3e}, sandwich {sandwich_s:.3e}")
        return BarrierSurfaceX(eps=eps, f_values=fy, heights=y, K=K, p_barrier=p_barrier, Q=Q,
                               surface=sampled, negativity_certificate=m_max,
                               sandwich_max=sandwich_s, tested_nodes=n_tested, barriers=meta,
                               linearized_certificate=negativity, sampled=True)

    rows = np.nonzero(np.any(tested, axis=1))[0]
    stride = max(1, len(rows) // max_nodes)
    rows = rows[::stride]
    surface = EquivariantSurface(cone=cone, w=W[rows], raw_positions=POS[rows], t=t,
                                 meta={"kind": "barrier", "eps": eps, "K": K, "Q": Q,
                                       "p_barrier": p_barrier})
    console.print(f"  Barrier: max m = {negativity:.3e} on {int(np.count_nonzero(tested))} nodes, "
                  f"sandwich {sandwich:.3e}")
    return BarrierSurfaceX(eps=eps, f_values=fy, heights=y, K=K, p_barrier=p_barrier, Q=Q,
                           surface=surface, negativity_certificate=negativity,
                           sandwich_max=sandwich, tested_nodes=int(np.count_nonzero(tested)),
                           barriers=meta, linearized_certificate=negativity)


def _derivatives(values: np.ndarray, y: np.ndarray, order: int, axis: int = 0):
    """values and its first `order` derivatives in y by repeated np.gradient."""
    out = [np.asarray(values, dtype=float)]
    for _ in range(order):
        if len(y) < 2:
            out.append(np.zeros_like(out[-1]))
        else:
            out.append(np.gradient(out[-1], y, axis=axis))
    return out


def _bvp_operator(leaf, F: np.ndarray) -> np.ndarray:
    """L_H F by finite differences in arclength, for barriers from the fallback solve."""
    cone = leaf.cone
    s, u, v, th = leaf.s[1:], leaf.u[1:], leaf.v[1:], leaf.theta[1:]
    dth = -cone.p * np.sin(th) / u + cone.q * np.cos(th) / v
    drift = cone.p * np.cos(th) / u + cone.q * np.sin(th) / v
    a2 = dth ** 2 + cone.p * (np.sin(th) / u) ** 2 + cone.q * (np.cos(th) / v) ** 2
    F1 = np.gradient(F, s)
    F2 = np.gradient(F1, s)
    return F2 + drift * F1 + a2 * F


# ---------------------------------------------------------------------------
# Non-concentration and blowups
# ---------------------------------------------------------------------------

def nonconcentration_experiment(M: SampledVarifold, table: FoliationTable, b: float, s: float,
                                A_grid: Optional[Sequence[float]] = None) -> NonconcentrationReport:
    """
    Least A on the grid with
    D(M; |y| < b/2) <= A D(M; r >= b s^A, |y| < b) + s D(M; |y| < b).
    """
    if not 0 < s < 0.5:
        raise ValueError(f"s must lie in (0, 1/2), got {s}")
    if b <= 0:
        raise ValueError(f"b must be positive, got {b}")
    grid = np.linspace(0.25, 16.0, 64) if A_grid is None else np.asarray(A_grid, dtype=float)
    lhs = dist_to_cone(M, table, Region(y_abs_max=0.5 * b))
    total = dist_to_cone(M, table, Region(y_abs_max=b))
    rows = []
    fitted = math.inf
    for A in grid:
        far = dist_to_cone(M, table, Region(r_min=b * s ** A, y_abs_max=b))
        rhs = A * far + s * total
        rows.append((float(A), far, rhs))
        if lhs <= rhs and math.isinf(fitted):
            fitted = float(A)
    return NonconcentrationReport(lhs=lhs, total=total, rows=rows, fitted_A=fitted, b=b, s=s)


def _monomials(m_max: int) -> List[Tuple[int, int]]:
    return [(k, m - 2 * k) for m in range(m_max + 1) for k in range(m // 2 + 1)]


def blowup_degree(M: SampledVarifold, table: FoliationTable, scales: Sequence[float],
                  r_min: float = 0.1, m_max: int = 8) -> Tuple[JacobiFieldExpansion, float, List[Dict[str, Any]]]:
    """
    Leading homogeneous part of the normalized blowups Lambda M.

    For each Lambda the graph function h over the cone on {r >= r_min} in B_1
    is divided by a = D_{C x R}(Lambda M; B_1), taken over the whole ball with
    the axis neighbourhood included, and projected by weighted least
    squares onto r^(2k - gamma) y^l with 2k + l <= m_max. The degree is
    m - gamma for the smallest m whose coefficient cluster clears the noise
    floor at the last scale.

    Returns:
        (leading expansion, degree, per-scale fits)

    Raises:
        NotGraphical: |h| > 0.2 r on the annulus
        ResolutionExceeded: fewer samples than monomials in some blowup
        NoSignal: every blowup is the cone, or no cluster clears the floor
    """
    cone = table.cone
    g = cone.gamma
    basis = _monomials(m_max)
    fits = []
    for lam in scales:
        ball = M.scaled(lam).restrict(Region(rho_max=1.0))
        Ml = ball.restrict(Region(r_min=r_min))
        if len(Ml) <= len(basis):
            raise ResolutionExceeded(f"scale {lam:g}: {len(Ml)} samples for {len(basis)} monomials")
        a = dist_to_cone(ball, table)
        if a <= 1e-12:
            continue
        u, v, y = Ml.points.T
        rc = u * math.cos(cone.alpha) + v * math.sin(cone.alpha)
        h = cone_offset(cone, u, v)
        if np.any(np.abs(h) > 0.2 * rc):
            raise NotGraphical(f"scale {lam:g}: |h|/r reaches {float(np.max(np.abs(h) / rc)):.3g}")
        sw = np.sqrt(Ml.weights)
        cols = np.column_stack([rc ** (2 * k - g) * y ** l for k, l in basis]) * sw[:, None]
        norms = np.linalg.norm(cols, axis=0)
        rhs = (h / a) * sw
        U, S, Vt = np.linalg.svd(cols / norms, full_matrices=False)
        inv = np.where(S > S[0] * 1e-13, 1.0 / S, 0.0)
        coef_hat = Vt.T @ (inv * (U.T @ rhs))
        res = rhs - (cols / norms) @ coef_hat
        sigma2 = float(res @ res) / max(len(rhs) - len(basis), 1)
        se2 = sigma2 * np.sum((Vt.T * inv) ** 2, axis=1)

        clusters, noise = {}, {}
        for (k, l), c, s2 in zip(basis, coef_hat, se2):
            m = 2 * k + l
            clusters[m] = clusters.get(m, 0.0) + float(c * c)
            noise[m] = noise.get(m, 0.0) + float(s2)
        clusters = {m: math.sqrt(c2) for m, c2 in clusters.items()}
        top = max(clusters.values())
        floors = {m: max(3.0 * math.sqrt(noise[m]), 1e-6 * top) for m in clusters}
        found = [m for m in sorted(clusters) if clusters[m] > floors[m]]
        fits.append({"scale": lam, "a": a, "residual": float(np.linalg.norm(res)),
                     "floors": floors, "clusters": clusters, "m": found[0] if found else None,
                     "coefs": dict(zip(basis, (coef_hat / norms).tolist()))})
    if not fits:
        raise NoSignal("every blowup coincides with the cone")
    last = fits[-1]
    if last["m"] is None:
        raise NoSignal(f"no coefficient cluster above the noise floor at scale {last['scale']:g}")
    m = last["m"]
    terms = tuple((k, l, last["coefs"][(k, l)]) for k, l in basis if 2 * k + l == m)
    return JacobiFieldExpansion(cone=cone, terms=terms), m - g, fits


# ---------------------------------------------------------------------------
# Distance to T_lambda
# ---------------------------------------------------------------------------

def default_gamma1(cone: QuadraticCone) -> float:
    g = cone.gamma
    return min(g + 0.1, 0.5 * (g + (cone.n - 3) / 2.0))


def _polyline_distance(pts: np.ndarray, line: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance from 2D points to a polyline and whether the foot is past its far end."""
    a, b = line[:-1], line[1:]
    ab = b - a
    ap = pts[:, None, :] - a[None]
    len2 = np.maximum(np.sum(ab * ab, axis=-1), 1e-300)
    par = np.sum(ap * ab[None], axis=-1) / len2
    clipped = np.clip(par, 0.0, 1.0)
    dist = np.linalg.norm(ap - clipped[..., None] * ab[None], axis=-1)
    seg = np.argmin(dist, axis=1)
    beyond = (seg == len(ab) - 1) & (par[np.arange(len(pts)), seg] > 1.0)
    return dist[np.arange(len(pts)), seg], beyond


def _slice_offsets(pts: np.ndarray, halves: Sequence[EquivariantSurface]) -> np.ndarray:
    """|delta|: distance from each point to T, interpolated linearly between slices in y."""
    slices = []
    for T in halves:
        X = T.positions
        for j in range(X.shape[1]):
            slices.append((float(X[0, j, 2]), X[:, j, :2]))
    if not slices:
        raise ValueError("no slices to project onto")
    delta = np.empty(len(pts))
    for sign in (1.0, -1.0):
        mask = (pts[:, 2] >= 0) if sign > 0 else (pts[:, 2] < 0)
        if not np.any(mask):
            continue
        half = sorted((yj, line) for yj, line in slices if yj * sign > 0)
        if not half:
            raise NotGraphical(f"no slices of T with sign(y) = {sign:+g}")
        ys = np.array([yj for yj, _ in half])
        P = pts[mask]
        yq = np.clip(P[:, 2], ys[0], ys[-1])
        hi = np.clip(np.searchsorted(ys, yq), 1, len(ys) - 1) if len(ys) > 1 else np.zeros(len(P), int)
        lo = np.maximum(hi - 1, 0)
        out = np.empty(len(P))
        for pair in set(zip(lo.tolist(), hi.tolist())):
            sel = (lo == pair[0]) & (hi == pair[1])
            d0, b0 = _polyline_distance(P[sel, :2], half[pair[0]][1])
            d1, b1 = _polyline_distance(P[sel, :2], half[pair[1]][1])
            if np.any(b0 | b1):
                raise NotGraphical("point projects beyond the radial reach of T")
            span = ys[pair[1]] - ys[pair[0]]
            wgt = (yq[sel] - ys[pair[0]]) / span if span > 0 else np.zeros(np.count_nonzero(sel))
            out[sel] = (1.0 - wgt) * d0 + wgt * d1
        delta[mask] = out
    return delta


def dist_to_T(M: SampledVarifold, table: FoliationTable, T_halves: Sequence[EquivariantSurface],
              lam: float, beta_param: float = BETA_PARAM, gamma1: Optional[float] = None,
              region: Optional[Region] = None) -> float:
    """
    D_{T_lam}(M; U), the least d such that on U either
    (a) d >= beta|lam| and M lies between H(-beta^-2 d) x R and H(beta^-2 d) x R, or
    (b) d < beta|lam| and M lies between the graphs of
        +-min{(beta|lam| + d) r^-gamma, d r^-gamma1} over T_lam.

    Args:
        M: Samples
        table: Foliation table
        T_halves: Surfaces making up T_lam (one or both halves)
        lam: The parameter of T_lam
        beta_param: beta, small and positive
        gamma1: Exponent in (gamma, (n-3)/2), default from default_gamma1
        region: Query region, default the annulus 1/2 <= rho <= 1

    Raises:
        NotGraphical: a sample cannot be projected onto T_lam
    """
    cone = table.cone
    g = cone.gamma
    gamma1 = default_gamma1(cone) if gamma1 is None else gamma1
    if not g < gamma1 < (cone.n - 3) / 2.0:
        raise ValueError(f"gamma1 must lie in ({g}, {(cone.n - 3) / 2.0}), got {gamma1}")
    if beta_param <= 0:
        raise ValueError(f"beta_param must be positive, got {beta_param}")
    region = Region(rho_min=0.5, rho_max=1.0) if region is None else region
    pts = M.points[region.contains(M.points)]
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) > 0]
    if len(pts) == 0:
        return 0.0
    threshold = beta_param * abs(lam)

    r = np.hypot(pts[:, 0], pts[:, 1])
    delta = _slice_offsets(pts, T_halves)
    # rounding of rescaled nodes
    delta = np.where(delta <= 1e-12 * r, 0.0, delta)
    d_b = float(np.max(np.maximum(np.maximum(delta * r ** g - threshold, delta * r ** gamma1), 0.0)))
    if d_b < threshold:
        return d_b
    t = np.atleast_1d(leaf_parameter(table, pts[:, 0], pts[:, 1], floor_bound=True))
    d_a = beta_param ** 2 * float(np.max(np.abs(t)))
    return max(d_a, threshold)


def dt3annulus_experiment(M: SampledVarifold, table: FoliationTable,
                          T1_halves: Sequence[EquivariantSurface], lam: float, L: float,
                          d: float, alpha: float, beta_param: float = BETA_PARAM,
                          gamma1: Optional[float] = None) -> DT3AnnulusReport:
    """
    D_k = D_{L^k T_lam}(L^k M) for k = -2..2 and the implications
    (i)  D_1 >= L^(1-d+alpha) D_0  =>  D_2 >= L^(1-d+alpha) D_1,
    (ii) D_-1 >= L^(d-1+alpha) D_0  =>  D_-2 >= L^(d-1+alpha) D_-1.

    L^k T_lam is T_(lam L^(k(1 - (l - gamma)))), built from T_1 by scale_T.

    Raises:
        MassBoundFail: the mass of M in B_R exceeds MASS_RATIO times that of
            C x R, with R = min(2 L^2, rho_max of M)
    """
    if L <= 1:
        raise ValueError(f"L must exceed 1, got {L}")
    cone = table.cone
    R = min(2.0 * L * L, M.rho_max)
    ratio = M.mass(R) / cone_mass(cone, R)
    if ratio > MASS_RATIO:
        raise MassBoundFail(f"mass ratio {ratio:.4g} in B_{R:.4g} exceeds {MASS_RATIO}")

    l = T1_halves[0].l
    dM = l - cone.gamma
    distances = {}
    for k in (-2, -1, 0, 1, 2):
        lam_k = lam * L ** (k * (1.0 - dM))
        T_k = [scale_T(T, lam_k) for T in T1_halves]
        distances[k] = dist_to_T(M.scaled(L ** k), table, T_k, lam_k, beta_param, gamma1)
    up = L ** (1.0 - d + alpha)
    down = L ** (d - 1.0 + alpha)
    return DT3AnnulusReport(
        L=L, d=d, alpha=alpha, distances=distances,
        hypothesis_i=bool(distances[1] >= up * distances[0]),
        conclusion_i=bool(distances[2] >= up * distances[1]),
        hypothesis_ii=bool(distances[-1] >= down * distances[0]),
        conclusion_ii=bool(distances[-2] >= down * distances[-1]),
        mass_ratio=ratio,
    )
