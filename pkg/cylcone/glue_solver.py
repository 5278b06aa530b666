"""Approximate solutions X, discrete mean curvature, Newton correction to T."""
import math
from dataclasses import dataclass, field, replace
from typing import List, Dict, Any, Optional, Tuple, Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded, LinAlgError
from rich.console import Console

from .config import (
    DEFAULT_SEED, GRID_SLICE, GRID_HEIGHT, GRID_DECADES, REGION_GRAPH_LIMIT, DELTA_OFFSET,
    TAU_OFFSET, JACOBIAN_STEP, NEWTON_MAX_ITER, NEWTON_REDUCTION, INDICIAL_AVOID_TOL,
    PARAM_STEP, NEWTON_BACKTRACKS, PROJECTION_ITERS, KAPPA_GRID,
)
from .cone_spectra import QuadraticCone, invariant_growth_rates
from .foliation import FoliationTable, LeafProfile, leaf_H, reflect_leaf
from .jacobi_fields import ujacobi_coeffs, evaluate_field
from .errors import (
    BadBeta, RegionOverflow, NewtonDiverged, SingularJacobian, NotGraphical, DegenerateStencil,
)

console = Console()

REGION_GRAPH = 1
REGION_BLEND = 2
REGION_LEAF = 4


@dataclass
class SliceFrame:
    """
    Base slice curves: slice j is sigma_j times a normalized leaf, at height y_j.

    Node (i, j) sits at normalized arclength s[i, j]; the *_i and *_j arrays
    are derivatives in grid index, which keeps the geometry of the base
    exact so that only the offset w is differenced.
    """
    leaf: LeafProfile
    P: np.ndarray  # (Ns, Ny, 2) normalized positions
    theta: np.ndarray
    kappa: np.ndarray  # dtheta/ds on the normalized leaf
    dkappa: np.ndarray
    s: np.ndarray
    s_i: np.ndarray
    s_ii: np.ndarray
    s_j: np.ndarray
    s_jj: np.ndarray
    s_ij: np.ndarray
    sigma: np.ndarray  # (Ny,)
    sigma_j: np.ndarray
    sigma_jj: np.ndarray
    y: np.ndarray
    y_j: np.ndarray
    y_jj: np.ndarray

    @property
    def tangent(self) -> np.ndarray:
        return np.stack([np.cos(self.theta), np.sin(self.theta)], axis=-1)

    @property
    def normal(self) -> np.ndarray:
        return np.stack([-np.sin(self.theta), np.cos(self.theta)], axis=-1)

    def scaled(self, factor: float, flip_y: bool = False) -> "SliceFrame":
        ys = -factor if flip_y else factor
        return replace(self, sigma=self.sigma * factor, sigma_j=self.sigma_j * factor,
                       sigma_jj=self.sigma_jj * factor, y=self.y * ys, y_j=self.y_j * ys,
                       y_jj=self.y_jj * ys)

    def swapped(self) -> "SliceFrame":
        """The frame mirrored by (u, v) -> (v, u); the normal changes sign."""
        return replace(self, leaf=reflect_leaf(self.leaf), P=self.P[..., ::-1].copy(),
                       theta=0.5 * math.pi - self.theta, kappa=-self.kappa, dkappa=-self.dkappa)


@dataclass
class EquivariantSurface:
    """
    An O(p+1) x O(q+1) invariant hypersurface as a grid of (u, v, y) nodes.

    With a frame, node (i, j) is sigma_j P(s_ij) + w_ij N(s_ij) at height y_j;
    without one, raw_positions holds the nodes directly.
    """
    cone: QuadraticCone
    w: np.ndarray
    frame: Optional[SliceFrame] = None
    raw_positions: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None  # leaf parameter of each base slice
    l: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.w.shape

    @property
    def positions(self) -> np.ndarray:
        """(Ns, Ny, 3) array of (u, v, y)."""
        if self.frame is None:
            return self.raw_positions
        return _frame_positions(self.frame, self.w)

    @property
    def r(self) -> np.ndarray:
        X = self.positions
        return np.hypot(X[..., 0], X[..., 1])

    @property
    def rho(self) -> np.ndarray:
        X = self.positions
        return np.sqrt(X[..., 0] ** 2 + X[..., 1] ** 2 + X[..., 2] ** 2)

    def with_offsets(self, w: np.ndarray) -> "EquivariantSurface":
        return replace(self, w=w, meta=dict(self.meta))

    def to_rows(self) -> List[Tuple[int, int, float, float, float, float]]:
        """CSV rows (i, j, u, v, y, w)."""
        X = self.positions
        Ns, Ny = self.shape
        return [(i, j, float(X[i, j, 0]), float(X[i, j, 1]), float(X[i, j, 2]), float(self.w[i, j]))
                for j in range(Ny) for i in range(Ns)]


@dataclass
class CurvatureField:
    """
    Weighted mean curvature m on nodes [1:-1, 1:-1] of a surface grid, or
    [:-1, 1:-1] when the axis row is included.
    """
    values: np.ndarray
    gradient_proxy: np.ndarray  # r |grad m|
    r: np.ndarray
    rho: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def scaled_sup(self) -> float:
        """sup r|m|, dimensionless."""
        return float(np.max(np.abs(self.values) * self.r)) if self.values.size else 0.0

    @classmethod
    def concat(cls, fields: Sequence["CurvatureField"]) -> "CurvatureField":
        """Fields of surface pieces on a shared slice grid, side by side in j."""
        return cls(values=np.concatenate([f.values for f in fields], axis=1),
                   gradient_proxy=np.concatenate([f.gradient_proxy for f in fields], axis=1),
                   r=np.concatenate([f.r for f in fields], axis=1),
                   rho=np.concatenate([f.rho for f in fields], axis=1),
                   meta={"pieces": [f.meta for f in fields]})


@dataclass(frozen=True)
class WeightedNormSpec:
    """Doubly weighted norm with outer weight delta and inner weight tau."""
    delta: float
    tau: float
    order: int = 2
    holder: float = 0.5

    def to_dict(self) -> Dict[str, Any]:
        return {"delta": self.delta, "tau": self.tau, "order": self.order, "holder": self.holder}


@dataclass
class CertificateReport:
    """sup over dyadic boxes of (|m| + r|grad m|) rho^(tau-delta) r^(2-tau)."""
    sup: float
    bound: float
    passed: bool
    box: Tuple[float, float]
    rows: List[Tuple[float, float, float, float, bool]]


@dataclass
class GraphOverLeaf:
    """A slice of T written as a normal graph over its base leaf."""
    y0: float
    slice_index: int
    r: np.ndarray
    rho: np.ndarray
    f: np.ndarray
    kappas: np.ndarray
    C1: np.ndarray
    kappa_best: float
    C1_best: float
    decay_slope: float
    base_t: float = math.nan  # leaf parameter of the base slice


def make_weights(cone: QuadraticCone, l: int, delta: Optional[float] = None,
                 tau: Optional[float] = None, order: int = 2, holder: float = 0.5) -> WeightedNormSpec:
    """
    Weights (delta, tau) with delta just above l - gamma and tau just below -gamma.

    Raises:
        ValueError: if delta <= l - gamma, tau > -gamma, or delta hits an indicial degree
    """
    g = cone.gamma
    delta = l - g + DELTA_OFFSET if delta is None else delta
    tau = -g - TAU_OFFSET if tau is None else tau
    if delta <= l - g:
        raise ValueError(f"delta must exceed l - gamma = {l - g}, got {delta}")
    if tau > -g:
        raise ValueError(f"tau must not exceed -gamma = {-g}, got {tau}")
    table = invariant_growth_rates(cone, delta + 1.0)
    for d in table.degrees:
        if abs(d - delta) < INDICIAL_AVOID_TOL:
            raise ValueError(f"delta {delta} coincides with the indicial degree {d}")
    if not 0 < holder <= 1:
        raise ValueError(f"holder exponent must lie in (0, 1], got {holder}")
    return WeightedNormSpec(delta=delta, tau=tau, order=order, holder=holder)


def cutoff(x) -> np.ndarray:
    """Smooth chi with chi = 1 for x <= 1 and chi = 0 for x >= 2."""
    t = np.clip(np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return 1.0 - a / (a + b)


def _index_derivatives(fn: Callable, j: np.ndarray):
    h = PARAM_STEP
    f0, fp, fm = fn(j), fn(j + h), fn(j - h)
    return f0, (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / (h * h)


def _build_frame(leaf: LeafProfile, shape: Tuple[int, int], height: Callable,
                 scale: Callable, reach: Callable) -> SliceFrame:
    """
    Lay nodes s = c sinh(b(j) i) along each normalized slice so that the last
    node reaches normalized arclength reach(j).
    """
    Ns, Ny = shape
    c = max(leaf.axis_radius, 1e-12) if leaf.side != "cone" else 1.0
    jj = np.arange(Ny, dtype=float)
    i = np.arange(Ns, dtype=float)[:, None]

    def b_of(j):
        return np.arcsinh(reach(j) / c) / (Ns - 1)

    def s_of(j):
        return c * np.sinh(b_of(j)[None, :] * i)

    def s_i_of(j):
        b = b_of(j)[None, :]
        return c * b * np.cosh(b * i)

    y, y_j, y_jj = _index_derivatives(height, jj)
    sigma, sigma_j, sigma_jj = _index_derivatives(scale, jj)
    s, s_j, s_jj = _index_derivatives(s_of, jj)
    s_i, s_ij, _ = _index_derivatives(s_i_of, jj)
    b = b_of(jj)[None, :]
    s_ii = c * b * b * np.sinh(b * i)

    st = leaf.state(s.ravel())
    P = np.stack([st["u"], st["v"]], axis=-1).reshape(Ns, Ny, 2)
    return SliceFrame(leaf=leaf, P=P, theta=st["theta"].reshape(Ns, Ny),
                      kappa=st["dtheta"].reshape(Ns, Ny), dkappa=st["d2theta"].reshape(Ns, Ny),
                      s=s, s_i=s_i, s_ii=s_ii, s_j=s_j, s_jj=s_jj, s_ij=s_ij,
                      sigma=sigma, sigma_j=sigma_j, sigma_jj=sigma_jj, y=y, y_j=y_j, y_jj=y_jj)


def _frame_positions(frame: SliceFrame, w: np.ndarray) -> np.ndarray:
    R = frame.sigma[None, :, None] * frame.P + w[..., None] * frame.normal
    Y = np.broadcast_to(frame.y[None, :], w.shape)
    return np.concatenate([R, Y[..., None]], axis=-1)


def leaf_surface(table: FoliationTable, t: float, grid: Tuple[int, int] = (GRID_SLICE, 24),
                 s_max: float = 1e3, heights: Tuple[float, float] = (-1.0, 1.0)) -> EquivariantSurface:
    """H(t) x R on a slice grid, with zero offsets."""
    leaf = leaf_H(table, t)
    Ns, Ny = grid
    lo, hi = heights
    return EquivariantSurface(
        cone=table.cone,
        w=np.zeros(grid),
        frame=_build_frame(leaf, grid,
                           height=lambda j: lo + (hi - lo) * j / (Ny - 1),
                           scale=lambda j: np.ones_like(j),
                           reach=lambda j: np.full_like(j, s_max)),
        t=np.full(Ny, t),
        meta={"kind": "leaf", "t": t},
    )


def offset_leaf_surface(leaf: LeafProfile, grid: Tuple[int, int], height: Callable, scale: Callable,
                        reach: Callable, offset: Callable) -> EquivariantSurface:
    """
    Slices scale(j) H + w N over a normalized leaf H, with w = offset(s, j) on
    the frame nodes (s normalized arclength, j the continuous height index).
    """
    frame = _build_frame(leaf, grid, height, scale, reach)
    jj = np.broadcast_to(np.arange(grid[1], dtype=float)[None, :], grid)
    w = np.asarray(offset(frame.s, jj), dtype=float)
    return EquivariantSurface(cone=leaf.cone, w=w, frame=frame, meta={"kind": "offset-leaf"})


def _leaf_height(leaf: LeafProfile, cone: QuadraticCone) -> Callable:
    """Height of a normalized leaf over the cone ray as a function of r_c."""
    e, nc = cone.ray, cone.ray_normal
    rc = leaf.u * e[0] + leaf.v * e[1]
    d = leaf.u * nc[0] + leaf.v * nc[1]
    start = int(np.argmin(rc))
    rc, d = rc[start:], d[start:]
    rc = np.maximum.accumulate(rc)

    def height(x):
        x = np.asarray(x, dtype=float)
        inside = np.interp(x, rc, d)
        far = leaf.asymptotic_coef * np.maximum(x, 1e-300) ** (-cone.gamma)
        return np.where(x > rc[-1], far, inside)

    return height


def build_X(table: FoliationTable, l: int, beta: float, A: float,
            grid: Tuple[int, int] = (GRID_SLICE, GRID_HEIGHT // 2),
            half: str = "upper", sign: int = 1) -> EquivariantSurface:
    """
    The approximate solution X on one half (y > 0 or y < 0) of the ball rho < 1/A.

    Each y-slice is a normal graph over the leaf H(sign y^l). Where
    r >= 2|y|^beta the slice is the graph of sign * u_l over the cone ray,
    where r <= |y|^beta it is the leaf itself, and in between the two
    heights over the cone are blended by the cutoff.

    Args:
        table: Foliation table of the cone
        l: Degree of the Jacobi field u_l
        beta: Gluing exponent in (1, l/(1+gamma))
        A: Scale parameter; the grid covers rho up to 1/A
        grid: (slice nodes, height nodes)
        half: "upper" or "lower"
        sign: +1 for T_1, -1 for T_-1

    Returns:
        EquivariantSurface with regions recorded in meta
    """
    cone = table.cone
    g = cone.gamma
    a = l / (1.0 + g)
    if not 1.0 < beta < a:
        raise BadBeta(f"beta must lie in (1, {a:.6g}), got {beta}")
    if half not in ("upper", "lower"):
        raise ValueError(f"half must be 'upper' or 'lower', got {half}")
    if A <= 0:
        raise ValueError(f"A must be positive, got {A}")

    jac = ujacobi_coeffs(cone, l)
    if sign < 0:
        jac = jac.scaled(-1.0)
    Ns, Ny = grid
    rho_max = 1.0 / A
    y_min, y_max = rho_max * 10.0 ** (-GRID_DECADES), rho_max / math.sqrt(2.0)
    ky = math.log(y_max / y_min) / (Ny - 1)
    ysign = 1.0 if half == "upper" else -1.0
    t_sign = sign * (ysign ** l)
    side = "plus" if t_sign > 0 else "minus"
    leaf = table.leaf(side)

    def height(j):
        return ysign * y_min * np.exp(ky * j)

    def scale(j):
        return np.abs(height(j)) ** a

    def reach(j):
        y = height(j)
        return np.sqrt(rho_max ** 2 - y * y) / scale(j)

    frame = _build_frame(leaf, grid, height, scale, reach)
    y = frame.y[None, :]
    sigma = frame.sigma[None, :]
    P = sigma[..., None] * frame.P
    N = frame.normal
    e, nc = cone.ray, cone.ray_normal
    leaf_height = _leaf_height(leaf, cone)
    knee = np.abs(y) ** beta

    def target(rc):
        chi = cutoff(rc / knee)
        u_l = evaluate_field(jac, np.maximum(rc, 1e-300), np.broadcast_to(y, rc.shape))["u"]
        return (1.0 - chi) * u_l + chi * sigma * leaf_height(rc / sigma), u_l

    rc0 = P @ e
    x0 = rc0 / knee
    active = x0 >= 1.0
    w = np.zeros((Ns, Ny))
    for _ in range(PROJECTION_ITERS):
        X = P + w[..., None] * N
        rc, d = X @ e, X @ nc
        h, _ = target(rc)
        eps = 1e-7 * rc
        dh = (target(rc + eps)[0] - target(rc - eps)[0]) / (2 * eps)
        slope = N @ nc - dh * (N @ e)
        step = np.where(active, (d - h) / slope, 0.0)
        w -= step
        if np.max(np.abs(step) / np.maximum(rc, 1e-300)) < 1e-14:
            break

    X = P + w[..., None] * N
    rc = X @ e
    _, u_l = target(rc)
    x = rc / knee
    graph = x >= 2.0
    if np.any(np.abs(u_l[graph]) > REGION_GRAPH_LIMIT * rc[graph]):
        worst = float(np.max(np.abs(u_l[graph]) / rc[graph]))
        raise RegionOverflow(f"|u_l|/r reaches {worst:.3g} on the graph region; increase A")
    if np.any(X < -1e-12 * rho_max):
        raise RegionOverflow("X leaves the (u, v) quadrant; increase A")

    regions = np.where(graph, REGION_GRAPH, np.where(active, REGION_BLEND, REGION_LEAF))
    return EquivariantSurface(
        cone=cone, w=w, frame=frame, t=t_sign * np.abs(frame.y) ** l, l=l,
        meta={"kind": "X", "l": l, "beta": beta, "A": A, "half": half, "sign": sign,
              "grid": list(grid), "rho_max": rho_max, "regions": regions},
    )


def build_X_halves(table: FoliationTable, l: int, beta: float, A: float,
                   grid: Tuple[int, int] = (GRID_SLICE, GRID_HEIGHT),
                   sign: int = 1) -> Tuple[EquivariantSurface, EquivariantSurface]:
    """
    X on the whole ball rho < 1/A as (upper, lower), each half on grid[1] // 2
    height nodes. Heights |y| < rho_max 10^-GRID_DECADES are not sampled.
    """
    Ns, Ny = grid
    if Ny % 2 or Ny < 16:
        raise ValueError(f"height nodes must be even and at least 16, got {Ny}")
    half_grid = (Ns, Ny // 2)
    return (build_X(table, l, beta, A, grid=half_grid, half="upper", sign=sign),
            build_X(table, l, beta, A, grid=half_grid, half="lower", sign=sign))


def halves_to_rows(upper: EquivariantSurface,
                   lower: EquivariantSurface) -> List[Tuple[int, int, float, float, float, float]]:
    """CSV rows (i, j, u, v, y, w) of both halves, with j increasing in y across the grid."""
    nh = lower.shape[1]
    rows = [(i, nh - 1 - j, u, v, y, w) for i, j, u, v, y, w in lower.to_rows()]
    rows += [(i, nh + j, u, v, y, w) for i, j, u, v, y, w in upper.to_rows()]
    return sorted(rows, key=lambda row: (row[1], row[0]))


def _interior_derivatives(X: np.ndarray):
    Xi = 0.5 * (X[2:, 1:-1] - X[:-2, 1:-1])
    Xj = 0.5 * (X[1:-1, 2:] - X[1:-1, :-2])
    Xii = X[2:, 1:-1] - 2.0 * X[1:-1, 1:-1] + X[:-2, 1:-1]
    Xjj = X[1:-1, 2:] - 2.0 * X[1:-1, 1:-1] + X[1:-1, :-2]
    Xij = 0.25 * (X[2:, 2:] - X[2:, :-2] - X[:-2, 2:] + X[:-2, :-2])
    return Xi, Xj, Xii, Xij, Xjj


def _axis_derivatives(X: np.ndarray):
    """Second-order one-sided stencils in i on row 0, central in j."""
    c = slice(1, -1)
    Xi = 0.5 * (-3.0 * X[0:1, c] + 4.0 * X[1:2, c] - X[2:3, c])
    Xii = 2.0 * X[0:1, c] - 5.0 * X[1:2, c] + 4.0 * X[2:3, c] - X[3:4, c]
    Dj = 0.5 * (X[:3, 2:] - X[:3, :-2])
    Xj = Dj[0:1]
    Xjj = X[0:1, 2:] - 2.0 * X[0:1, c] + X[0:1, :-2]
    Xij = 0.5 * (-3.0 * Dj[0:1] + 4.0 * Dj[1:2] - Dj[2:3])
    return Xi, Xj, Xii, Xij, Xjj


def _frame_geometry(frame: SliceFrame, w: np.ndarray, axis: bool = False):
    """
    Position, first and second index derivatives and in-plane normal on
    interior nodes, or on the axis row i = 0 when `axis` is set.
    """
    sl = (slice(0, 1) if axis else slice(1, -1), slice(1, -1))
    T, N = frame.tangent[sl], frame.normal[sl]
    P = frame.P[sl]
    k, dk = frame.kappa[sl][..., None], frame.dkappa[sl][..., None]
    si, sii = frame.s_i[sl][..., None], frame.s_ii[sl][..., None]
    sj, sjj, sij = frame.s_j[sl][..., None], frame.s_jj[sl][..., None], frame.s_ij[sl][..., None]
    sg = frame.sigma[None, 1:-1, None]
    sg_j = frame.sigma_j[None, 1:-1, None]
    sg_jj = frame.sigma_jj[None, 1:-1, None]

    R = sg * P
    R_i = sg * T * si
    R_j = sg_j * P + sg * T * sj
    R_ii = sg * (k * N * si ** 2 + T * sii)
    R_ij = sg_j * T * si + sg * (k * N * si * sj + T * sij)
    R_jj = sg_jj * P + 2.0 * sg_j * T * sj + sg * (k * N * sj ** 2 + T * sjj)

    dN = -k * T
    d2N = -dk * T - k * k * N
    N_i, N_j = dN * si, dN * sj
    N_ii = d2N * si ** 2 + dN * sii
    N_ij = d2N * si * sj + dN * sij
    N_jj = d2N * sj ** 2 + dN * sjj

    W = w[..., None]
    wi, wj, wii, wij, wjj = (_axis_derivatives if axis else _interior_derivatives)(W)
    w0 = W[sl]
    X = R + w0 * N
    Xi = R_i + wi * N + w0 * N_i
    Xj = R_j + wj * N + w0 * N_j
    Xii = R_ii + wii * N + 2.0 * wi * N_i + w0 * N_ii
    Xij = R_ij + wij * N + wi * N_j + wj * N_i + w0 * N_ij
    Xjj = R_jj + wjj * N + 2.0 * wj * N_j + w0 * N_jj

    shape = X.shape[:2]
    y = np.broadcast_to(frame.y[None, 1:-1], shape)
    zero = np.zeros(shape)

    def lift(vec, ycomp):
        return np.concatenate([vec, np.broadcast_to(ycomp, shape)[..., None]], axis=-1)

    return (lift(X, y), lift(Xi, zero), lift(Xj, frame.y_j[None, 1:-1]),
            lift(Xii, zero), lift(Xij, zero), lift(Xjj, frame.y_jj[None, 1:-1]), lift(N, zero))


def _profile_forms(Xi, Xj, Xii, Xij, Xjj, N):
    """Unit normal, unnormalized normal Xi x Xj, E, G and H_2 of the profile surface."""
    a = np.cross(Xi, Xj)
    nu = a / np.linalg.norm(a, axis=-1, keepdims=True)
    if N is not None:
        nu *= np.sign(np.sum(nu * N, axis=-1, keepdims=True))
    E = np.sum(Xi * Xi, axis=-1)
    F = np.sum(Xi * Xj, axis=-1)
    G = np.sum(Xj * Xj, axis=-1)
    e = np.sum(Xii * nu, axis=-1)
    f = np.sum(Xij * nu, axis=-1)
    g = np.sum(Xjj * nu, axis=-1)
    H2 = (e * G - 2.0 * f * F + g * E) / (E * G - F * F)
    return nu, a, E, G, H2


def _curvature_values(surface: EquivariantSurface, w: np.ndarray) -> Tuple[np.ndarray, ...]:
    """m and the first fundamental form on interior nodes."""
    if surface.frame is not None:
        X, Xi, Xj, Xii, Xij, Xjj, N = _frame_geometry(surface.frame, w)
    else:
        P = surface.raw_positions
        X = P[1:-1, 1:-1]
        Xi, Xj, Xii, Xij, Xjj = _interior_derivatives(P)
        N = None
    nu, _, E, G, H2 = _profile_forms(Xi, Xj, Xii, Xij, Xjj, N)
    cone = surface.cone
    m = H2 - cone.p * nu[..., 0] / X[..., 0] - cone.q * nu[..., 1] / X[..., 1]
    return m, X, E, G


def _axis_curvature(surface: EquivariantSurface, w: np.ndarray) -> Tuple[np.ndarray, ...]:
    """
    m on the axis row i = 0 of a framed surface, from one-sided stencils.

    Where a coordinate vanishes its term nu_c / X_c is replaced by the limit
    d_i nu_c / d_i X_c.

    Raises:
        DegenerateStencil: both coordinates vanish, or d_i X_c does
    """
    X, Xi, Xj, Xii, Xij, Xjj, N = _frame_geometry(surface.frame, w, axis=True)
    nu, a, E, G, H2 = _profile_forms(Xi, Xj, Xii, Xij, Xjj, N)
    a_norm = np.linalg.norm(a, axis=-1, keepdims=True)
    orient = np.sign(np.sum(nu * a, axis=-1, keepdims=True))
    a_i = np.cross(Xii, Xj) + np.cross(Xi, Xij)
    nu_i = orient * (a_i - nu * np.sum(nu * a_i, axis=-1, keepdims=True)) / a_norm

    tol = 1e-12 * np.hypot(X[..., 0], X[..., 1])
    step = 1e-12 * np.linalg.norm(Xi, axis=-1)
    cone = surface.cone
    m = H2.copy()
    on_axis = np.zeros(X.shape[:-1] + (2,), dtype=bool)
    for c, weight in ((0, cone.p), (1, cone.q)):
        on_axis[..., c] = np.abs(X[..., c]) <= tol
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(on_axis[..., c], nu_i[..., c] / Xi[..., c], nu[..., c] / X[..., c])
        m -= weight * term
    degenerate = np.all(on_axis, axis=-1) | np.any(on_axis & (np.abs(Xi[..., :2]) <= step[..., None]),
                                                   axis=-1)
    if np.any(degenerate):
        cols = (np.nonzero(degenerate[0])[0] + 1).tolist()
        raise DegenerateStencil(f"axis nodes (0, j) for j in {cols[:8]} have no one-sided limit")
    return m, X, E, G


def mean_curvature(surface: EquivariantSurface) -> CurvatureField:
    """
    Weighted mean curvature m = H_2 - p nu_u/u - q nu_v/v of the invariant
    hypersurface, with H_2 the mean curvature of the (u, v, y) profile surface
    and nu oriented along the slice normal.

    Framed surfaces also get the axis row i = 0 from one-sided stencils; those
    nodes are listed under meta["one_sided"].
    """
    m, X, E, G = _curvature_values(surface, surface.w)
    meta: Dict[str, Any] = {"one_sided": []}
    if surface.frame is not None and surface.shape[0] >= 4:
        m0, X0, E0, G0 = _axis_curvature(surface, surface.w)
        m, X = np.concatenate([m0, m]), np.concatenate([X0, X])
        E, G = np.concatenate([E0, E]), np.concatenate([G0, G])
        meta["one_sided"] = [(0, j) for j in range(1, surface.shape[1] - 1)]
        console.print(f"  [yellow]Warning: {len(meta['one_sided'])} axis nodes use "
                      f"one-sided stencils[/yellow]")
    r = np.hypot(X[..., 0], X[..., 1])
    rho = np.linalg.norm(X, axis=-1)
    if m.shape[0] > 1 and m.shape[1] > 1:
        mi, mj = np.gradient(m)
        grad = np.sqrt(mi * mi / E + mj * mj / G)
    else:
        grad = np.zeros_like(m)
    return CurvatureField(values=m, gradient_proxy=r * grad, r=r, rho=rho, meta=meta)


def weighted_certificate(field: CurvatureField, spec: WeightedNormSpec, kappa: float,
                         A: float) -> CertificateReport:
    """
    sup over boxes r in (R, 2R), rho in (S, 2S) of (|m| + r|grad m|) rho^(tau-delta) r^(2-tau),
    compared against A^-kappa.
    """
    bound = A ** (-kappa)
    if field.values.size == 0:
        return CertificateReport(sup=0.0, bound=bound, passed=True, box=(math.nan, math.nan), rows=[])
    term = ((np.abs(field.values) + field.gradient_proxy)
            * field.rho ** (spec.tau - spec.delta) * field.r ** (2.0 - spec.tau))
    keys = np.stack([np.floor(np.log2(field.r)), np.floor(np.log2(field.rho))], axis=-1).reshape(-1, 2)
    boxes, inverse = np.unique(keys, axis=0, return_inverse=True)
    sups = np.zeros(len(boxes))
    np.maximum.at(sups, inverse.ravel(), term.ravel())
    rows = [(float(2.0 ** R), float(2.0 ** S), float(v), bound, bool(v <= bound))
            for (R, S), v in zip(boxes, sups)]
    worst = int(np.argmax(sups))
    return CertificateReport(sup=float(sups[worst]), bound=bound, passed=bool(sups[worst] <= bound),
                             box=(rows[worst][0], rows[worst][1]), rows=rows)


def _unknown_layout(shape: Tuple[int, int]):
    Ns, Ny = shape
    return Ns - 2, Ny - 2


def _assemble(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Insert interior unknowns; the axis row copies its neighbour."""
    out = w.copy()
    ni, nj = out.shape[0] - 2, out.shape[1] - 2
    out[1:-1, 1:-1] = x.reshape(nj, ni).T
    out[0, 1:-1] = out[1, 1:-1]
    return out


def _flatten(a: np.ndarray) -> np.ndarray:
    """Interior array (ni, nj) -> vector ordered with i fastest."""
    return a.T.ravel()


def _banded_jacobian(surface: EquivariantSurface, w: np.ndarray, m0: np.ndarray,
                     scale: np.ndarray) -> np.ndarray:
    """
    Forward-difference Jacobian of m in banded storage, assembled with a
    3x3 colouring so nine residual evaluations cover every column.
    """
    ni, nj = _unknown_layout(w.shape)
    size = ni * nj
    bw = ni + 1
    ab = np.zeros((2 * bw + 1, size))
    I, J = np.meshgrid(np.arange(ni), np.arange(nj), indexing="ij")
    x0 = _flatten(w[1:-1, 1:-1])
    h = JACOBIAN_STEP * _flatten(scale)
    m0f = _flatten(m0)
    for ci in range(3):
        for cj in range(3):
            mask = (I % 3 == ci) & (J % 3 == cj)
            mf = _flatten(mask)
            x = x0 + np.where(mf, h, 0.0)
            dm = _flatten(_curvature_values(surface, _assemble(w, x))[0]) - m0f
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ii, jj = I + di, J + dj
                    ok = (ii >= 0) & (ii < ni) & (jj >= 0) & (jj < nj)
                    ok &= (ii % 3 == ci) & (jj % 3 == cj)
                    rows = _flatten(I + J * ni)[_flatten(ok)]
                    cols = _flatten(ii + jj * ni)[_flatten(ok)]
                    ab[bw + rows - cols, cols] = dm[rows] / h[cols]
    return ab


def newton_solve_T(X: EquivariantSurface, spec: WeightedNormSpec,
                   max_iter: int = NEWTON_MAX_ITER) -> EquivariantSurface:
    """
    Newton-correct the offsets of X to a discrete solution of m = 0.

    Unknowns are the interior offsets; the outer and height boundaries keep
    the values of X and the axis row mirrors its neighbour. The residual is
    sup r|m| over interior nodes.

    Raises:
        NewtonDiverged: residual increased on two consecutive steps
        SingularJacobian: the banded factorization failed
    """
    if X.frame is None:
        raise ValueError("Newton correction needs a surface with a slice frame")
    w = X.w.copy()
    ni, nj = _unknown_layout(w.shape)
    bw = ni + 1
    m, pts, _, _ = _curvature_values(X, w)
    r = np.hypot(pts[..., 0], pts[..., 1])
    residual = float(np.max(np.abs(m) * r))
    history = [residual]
    initial = residual
    increases = 0
    console.print(f"  Newton: initial residual sup r|m| = {residual:.3e}")
    for it in range(max_iter):
        if residual <= NEWTON_REDUCTION * initial or residual < 1e-12:
            break
        ab = _banded_jacobian(X, w, m, r)
        try:
            step = solve_banded((bw, bw), ab, -_flatten(m))
        except (LinAlgError, ValueError) as e:
            raise SingularJacobian(f"banded solve failed at iteration {it}: {e}")
        if not np.all(np.isfinite(step)):
            bad = int(np.argmin(np.isfinite(step)))
            raise SingularJacobian(f"non-finite update at unknown (i={bad % ni + 1}, j={bad // ni + 1})")

        x0 = _flatten(w[1:-1, 1:-1])
        factor = 1.0
        for _ in range(NEWTON_BACKTRACKS + 1):
            trial = _assemble(w, x0 + factor * step)
            m_trial, pts, _, _ = _curvature_values(X, trial)
            r_trial = np.hypot(pts[..., 0], pts[..., 1])
            new_residual = float(np.max(np.abs(m_trial) * r_trial))
            if np.isfinite(new_residual) and new_residual < residual:
                break
            factor *= 0.5
        if not np.isfinite(new_residual) or new_residual >= residual:
            increases += 1
            if increases >= 2:
                raise NewtonDiverged(f"residual increased twice in a row (now {new_residual:.3e})")
            console.print(f"  [yellow]Warning: Newton step {it + 1} did not reduce the residual[/yellow]")
            continue
        increases = 0
        w, m, r, residual = trial, m_trial, r_trial, new_residual
        history.append(residual)
        console.print(f"  Newton {it + 1}: residual {residual:.3e} (step {factor:g})")

    T = X.with_offsets(w)
    T.meta.update({"kind": "T", "newton_history": history, "newton_iterations": len(history) - 1,
                   "weights": spec.to_dict()})
    return T


def quadratic_remainder_check(X: EquivariantSurface, samples: int = 20, seed: int = DEFAULT_SEED,
                              eps_grid=(1e-4, 3e-4, 1e-3, 3e-3, 1e-2)) -> Dict[str, Any]:
    """
    Fit the exponent of ||m(w + e v) - m(w) - e J v|| in e over random offsets v.

    Returns:
        Dict with per-sample exponents and their minimum
    """
    if X.frame is None:
        raise ValueError("remainder check needs a surface with a slice frame")
    rng = np.random.default_rng(seed)
    w = X.w
    m0, pts, _, _ = _curvature_values(X, w)
    r_int = np.hypot(pts[..., 0], pts[..., 1])
    r_full = np.pad(r_int, 1, mode="edge")
    eps = np.asarray(eps_grid, dtype=float)
    h = 1e-2 * eps[0]
    exponents = []
    for _ in range(samples):
        v = 0.1 * r_full * rng.standard_normal(w.shape)
        v[-1, :] = v[:, 0] = v[:, -1] = 0.0
        v[0, :] = v[1, :]
        v[0, 0] = v[0, -1] = 0.0
        Jv = (_curvature_values(X, w + h * v)[0] - _curvature_values(X, w - h * v)[0]) / (2 * h)
        rem = [float(np.max(np.abs(_curvature_values(X, w + e * v)[0] - m0 - e * Jv) * r_int))
               for e in eps]
        exponents.append(float(np.polyfit(np.log(eps), np.log(rem), 1)[0]))
    return {"exponents": exponents, "min_exponent": min(exponents), "eps": eps.tolist()}


def graph_over_leaf(T: EquivariantSurface, y0: float,
                    kappas: Optional[np.ndarray] = None) -> GraphOverLeaf:
    """
    The slice of T nearest to height y0 as a normal graph f over H(y0^l), and the
    smallest C1 with |f| <= C1 rho^(l - kappa) r^(kappa - gamma) for each scanned kappa.

    The grid leaves out |y| below its first slice. When y0 is nearer to 0 than
    to any slice, the base is the cone H(0) and f = +-u_l(r, 0) over the radii
    of the lowest slice, with slice_index -1.
    """
    if T.frame is None:
        raise ValueError("graph decomposition needs a surface with a slice frame")
    frame = T.frame
    j = int(np.argmin(np.abs(frame.y - y0)))
    g = T.cone.gamma
    l = T.l
    X = T.positions[1:, j]
    if abs(y0) < abs(frame.y[j] - y0):
        r = np.hypot(X[:, 0], X[:, 1])
        jac = ujacobi_coeffs(T.cone, l, warn=False).scaled(
            T.meta.get("sign", 1) * T.meta.get("scale", 1.0) ** (1.0 - (l - g)))
        f = evaluate_field(jac, r, np.zeros_like(r))["u"]
        j, y_slice, rho, base_t = -1, 0.0, r, 0.0
    else:
        f = T.w[1:, j]
        focal = np.abs(f * frame.kappa[1:, j] / frame.sigma[j])
        r = np.hypot(X[:, 0], X[:, 1])
        if np.any(focal >= 1.0) or np.any(np.diff(frame.s[1:, j]) <= 0):
            raise NotGraphical(f"slice at y={frame.y[j]:.4g} is not a normal graph over its leaf")
        y_slice = float(frame.y[j])
        rho = np.sqrt(r * r + y_slice ** 2)
        base_t = math.nan if T.t is None else float(T.t[j])

    kappas = np.linspace(0.0, float(l), KAPPA_GRID) if kappas is None else np.asarray(kappas)
    C1 = np.array([float(np.max(np.abs(f) / (rho ** (l - k) * r ** (k - g)))) for k in kappas])
    best = int(np.argmin(C1))

    nz = np.abs(f) > 0
    outer = nz & (r >= np.sqrt(r[nz].min() * r[nz].max())) if np.any(nz) else nz
    slope = (float(np.polyfit(np.log(r[outer]), np.log(np.abs(f[outer])), 1)[0])
             if np.count_nonzero(outer) > 2 else math.nan)
    return GraphOverLeaf(y0=y_slice, slice_index=j, r=r, rho=rho, f=f, kappas=kappas,
                         C1=C1, kappa_best=float(kappas[best]), C1_best=float(C1[best]),
                         decay_slope=slope, base_t=base_t)


def scale_T(T: EquivariantSurface, lam: float) -> EquivariantSurface:
    """
    T_lam = |lam|^(1/(1-(l-gamma))) T_sign(lam).

    For negative lam the T_-1 branch comes from a symmetry of T_1: reflecting
    y when l is odd, and for even l the swap (u, v) -> (v, u), which maps the
    cone to itself with its normal reversed and so exists only when p = q.
    Even l with p != q needs T_-1 from build_X(sign=-1).
    """
    if lam == 0:
        raise ValueError("lam must be nonzero")
    cone = T.cone
    swap = lam < 0 and T.l % 2 == 0
    if swap and cone.p != cone.q:
        raise ValueError(f"for even l and p != q (p={cone.p}, q={cone.q}) the T_-1 branch "
                         f"must be built with build_X(sign=-1)")
    g = cone.gamma
    factor = abs(lam) ** (1.0 / (1.0 - (T.l - g)))
    flip = lam < 0 and not swap
    parity = -1.0 if swap else 1.0
    meta = dict(T.meta)
    meta["scale"] = meta.get("scale", 1.0) * factor
    if flip:
        meta["half"] = {"upper": "lower", "lower": "upper"}.get(meta.get("half"), meta.get("half"))
    if lam < 0 and "sign" in meta:
        meta["sign"] = -meta["sign"]
    if T.frame is None:
        X = T.raw_positions * factor
        if flip:
            X[..., 2] *= -1.0
        if swap:
            X[..., :2] = X[..., 1::-1].copy()
        return replace(T, raw_positions=X, w=parity * factor * T.w, meta=meta)
    frame = T.frame.swapped() if swap else T.frame
    t = None if T.t is None else parity * T.t * factor ** (g + 1)
    return replace(T, frame=frame.scaled(factor, flip_y=flip), w=parity * factor * T.w, t=t, meta=meta)


def norm_comparison_check(w: np.ndarray, surface: EquivariantSurface, spec: WeightedNormSpec,
                          A: float, kappa: float) -> Dict[str, Any]:
    """
    Smallest C with |w|_unit <= C A^-kappa |w|_weighted on rho < 1/A.

    Both norms sum the derivatives up to spec.order: |w|_unit = sup sum_k r^(k-1) |D^k w|
    and |w|_weighted = sup sum_k r^k |D^k w| rho^(tau-delta) r^-tau. D^k w is a
    finite-difference proxy taken along the grid lines, each index step divided
    by the node spacing |dX|.
    """
    X = surface.positions
    r, rho = surface.r, surface.rho
    mask = (r > 0) & (rho <= (1.0 / A) * (1.0 + 1e-12))
    spacing = [np.linalg.norm(np.gradient(X, axis=axis), axis=-1) for axis in (0, 1)]
    spacing = [np.where(s > 0, s, np.inf) for s in spacing]
    comps = [np.asarray(w, dtype=float)]
    levels = [np.abs(comps[0])]
    for _ in range(spec.order):
        comps = [np.gradient(c, axis=axis) / spacing[axis] for c in comps for axis in (0, 1)]
        levels.append(np.sqrt(sum(c * c for c in comps)))
    if not np.any(mask):
        return {"C": 0.0, "unit_norm": 0.0, "weighted_norm": 0.0, "unit_c0": 0.0,
                "orders": [0.0] * len(levels), "A": A, "kappa": kappa}
    rm, rhom = r[mask], rho[mask]
    terms = [rm ** (k - 1) * level[mask] for k, level in enumerate(levels)]
    unit = float(np.max(sum(terms)))
    weight = rhom ** (spec.tau - spec.delta) * rm ** (1.0 - spec.tau)
    weighted = float(np.max(sum(terms) * weight))
    C = 0.0 if unit == 0 else unit / (A ** (-kappa) * weighted)
    return {"C": C, "unit_norm": unit, "weighted_norm": weighted, "unit_c0": float(np.max(terms[0])),
            "orders": [float(np.max(t)) for t in terms], "A": A, "kappa": kappa}


def symmetry_defect(upper: EquivariantSurface, lower: EquivariantSurface) -> float:
    """
    max |X_lower - reflect(X_upper)| / rho_max with reflect (u, v, y) -> (v, u, -y);
    for p = q and odd l the two halves of X are exchanged by this map.
    """
    if upper.shape != lower.shape:
        raise ValueError("halves must share the grid")
    Xu, Xl = upper.positions, lower.positions
    mirrored = np.stack([Xu[..., 1], Xu[..., 0], -Xu[..., 2]], axis=-1)
    scale = float(np.max(np.linalg.norm(Xu, axis=-1)))
    return float(np.max(np.linalg.norm(Xl - mirrored, axis=-1))) / scale
