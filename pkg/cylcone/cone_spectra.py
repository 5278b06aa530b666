"""Geometry and invariant-sector spectra of quadratic cones C(S^p x S^q)."""
import math
from dataclasses import dataclass
from typing import List, Dict, Any, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal
from rich.console import Console

from .config import LAMBDA_GRID_POINTS, SL_GRID
from .errors import InvalidDimension, UnstableCone, GapUnattainable

console = Console()


@dataclass(frozen=True)
class QuadraticCone:
    """The cone over S^p(a) x S^q(b) in R^n, n = p + q + 2."""
    p: int
    q: int
    n: int
    alpha: float  # angle of the cone ray in the (u, v) quadrant
    link_radii: Tuple[float, float]
    secfund_sq: float
    gamma: float

    @property
    def lambda1(self) -> float:
        return -2.0 * (self.n - 2)

    @property
    def ray(self) -> np.ndarray:
        return np.array([math.cos(self.alpha), math.sin(self.alpha)])

    @property
    def ray_normal(self) -> np.ndarray:
        """Unit normal to the ray, pointing towards the v axis."""
        return np.array([-math.sin(self.alpha), math.cos(self.alpha)])

    def c_coefficient(self, a: float) -> float:
        """c_a in L_C(r^a) = c_a r^(a-2) on the invariant sector."""
        return a * a + (self.n - 3) * a - (self.n - 2 + self.lambda1)

    def to_dict(self) -> Dict[str, Any]:
        return {"p": self.p, "q": self.q, "n": self.n, "alpha": self.alpha,
                "link_radii": list(self.link_radii), "secfund_sq": self.secfund_sq,
                "gamma": self.gamma}


@dataclass(frozen=True)
class IndicialPair:
    """Roots of gamma^2 - (n-3) gamma - (n-2+lambda) = 0."""
    lambda_i: float
    gamma_minus: float
    gamma_plus: float
    real: bool
    imag: float = 0.0  # imaginary part when real is False
    j: int = 0
    k: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {"lambda": self.lambda_i, "gm": self.gamma_minus, "gp": self.gamma_plus,
                "real": self.real, "imag": self.imag, "j": self.j, "k": self.k}


@dataclass(frozen=True)
class GrowthRateTable:
    """Invariant homogeneous Jacobi field degrees m - gamma on C x R."""
    degrees: Tuple[float, ...]
    cutoff: float
    gamma: float = 0.0
    n: int = 0

    def contains(self, degree: float, tol: float = 1e-9) -> bool:
        m = degree + self.gamma
        return abs(m - round(m)) <= tol and round(m) >= 0


def make_cone(p: int, q: int) -> QuadraticCone:
    """
    Build the quadratic cone C(S^p x S^q).

    Args:
        p: Dimension of the first sphere factor
        q: Dimension of the second sphere factor

    Returns:
        QuadraticCone with exact indicial data
    """
    if p < 1 or q < 1:
        raise InvalidDimension(f"sphere dimensions must be >= 1, got p={p}, q={q}")
    n = p + q + 2
    disc = (n - 3) ** 2 - 4 * (n - 2)
    if disc <= 0:
        raise UnstableCone(f"C(S^{p} x S^{q}) is not strictly stable: (n-3)^2 - 4(n-2) = {disc}")

    a = math.sqrt(p / (p + q))
    b = math.sqrt(q / (p + q))
    gamma = ((n - 3) - math.sqrt(disc)) / 2.0
    return QuadraticCone(
        p=p,
        q=q,
        n=n,
        alpha=math.atan(math.sqrt(q / p)),
        link_radii=(a, b),
        secfund_sq=p * (b / a) ** 2 + q * (a / b) ** 2,
        gamma=gamma,
    )


def indicial_roots(cone: QuadraticCone, lambda_i: float) -> IndicialPair:
    """Solve the indicial equation for a link eigenvalue lambda_i."""
    n = cone.n
    disc = (n - 3) ** 2 + 4.0 * (n - 2 + lambda_i)
    if disc >= 0:
        root = math.sqrt(disc)
        return IndicialPair(lambda_i, ((n - 3) - root) / 2.0, ((n - 3) + root) / 2.0, True)
    imag = math.sqrt(-disc) / 2.0
    return IndicialPair(lambda_i, (n - 3) / 2.0, (n - 3) / 2.0, False, imag=imag)


def indicial_residual(cone: QuadraticCone, pair: IndicialPair) -> float:
    """Largest scaled residual of the two real roots in the indicial equation."""
    n = cone.n
    worst = 0.0
    for g in (pair.gamma_minus, pair.gamma_plus):
        res = g * g - (n - 3) * g - (n - 2 + pair.lambda_i)
        worst = max(worst, abs(res) / max(1.0, g * g))
    return worst


def link_eigenvalues(cone: QuadraticCone, j_max: int, k_max: int) -> List[IndicialPair]:
    """
    Closed-form spectrum of -L_Sigma on S^p(a) x S^q(b), paired with indicial roots.

    Args:
        cone: The quadratic cone
        j_max: Highest harmonic degree on the S^p factor
        k_max: Highest harmonic degree on the S^q factor

    Returns:
        IndicialPairs sorted by eigenvalue
    """
    a, b = cone.link_radii
    pairs = []
    for j in range(j_max + 1):
        for k in range(k_max + 1):
            lam = j * (j + cone.p - 1) / a ** 2 + k * (k + cone.q - 1) / b ** 2 + cone.lambda1
            pair = indicial_roots(cone, lam)
            pairs.append(IndicialPair(pair.lambda_i, pair.gamma_minus, pair.gamma_plus,
                                      pair.real, pair.imag, j, k))
    pairs.sort(key=lambda pr: (pr.lambda_i, pr.j, pr.k))
    return pairs


def sturm_liouville_link_eigenvalues(cone: QuadraticCone, factor: str = "p",
                                     count: int = 3, grid: int = SL_GRID) -> np.ndarray:
    """
    Finite-difference cross-check of the link spectrum.

    Discretizes the zonal Laplacian -(sin^(m-1) f')'/(a^2 sin^(m-1)) on one
    sphere factor with a cell-centred second-order stencil; the other factor
    is taken constant.

    Args:
        cone: The quadratic cone
        factor: "p" or "q", the sphere factor carrying the harmonic
        count: Number of lowest eigenvalues returned
        grid: Number of cells on (0, pi)

    Returns:
        The lowest eigenvalues of -L_Sigma in that sector
    """
    m, radius = (cone.p, cone.link_radii[0]) if factor == "p" else (cone.q, cone.link_radii[1])
    h = math.pi / grid
    centres = (np.arange(grid) + 0.5) * h
    faces = np.arange(1, grid) * h
    weight = np.sin(centres) ** (m - 1)
    flux = np.sin(faces) ** (m - 1) / h ** 2

    diag = np.zeros(grid)
    diag[:-1] += flux
    diag[1:] += flux
    scale = 1.0 / np.sqrt(weight)
    d = diag * scale * scale
    e = -flux * scale[:-1] * scale[1:]
    mu = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, count - 1))
    return mu / radius ** 2 + cone.lambda1


def stability_margin(cone: QuadraticCone) -> float:
    """(n-3)^2 + 4(n-2+lambda_1); positive iff strictly stable in the invariant sector."""
    return (cone.n - 3) ** 2 + 4.0 * (cone.n - 2 + cone.lambda1)


def forbidden_interval(cone: QuadraticCone) -> Tuple[float, float]:
    """Degrees with no homogeneous Jacobi fields on C."""
    return (3 - cone.n + cone.gamma, -cone.gamma)


def invariant_growth_rates(cone: QuadraticCone, cutoff: float) -> GrowthRateTable:
    """Degrees m - gamma, m = 0, 1, ..., up to the cutoff."""
    if cutoff < -cone.gamma - 1e-12:
        raise ValueError(f"cutoff {cutoff} is below -gamma = {-cone.gamma}")
    count = int(math.floor(cutoff + cone.gamma + 1e-12)) + 1
    degrees = tuple(m - cone.gamma for m in range(count))
    return GrowthRateTable(degrees=degrees, cutoff=cutoff, gamma=cone.gamma, n=cone.n)


def cylinder_link_eigenvalue(cone: QuadraticCone, degree: float) -> float:
    """Eigenvalue sigma of the C x R link operator belonging to degree -mu."""
    n = cone.n
    return (degree - (2 - n) / 2.0) ** 2 - n * n / 4.0


def weyl_count(table: GrowthRateTable, bound: float) -> int:
    """Number of tabulated degrees -mu_k <= bound."""
    return sum(1 for d in table.degrees if d <= bound)


def _eligible(table: GrowthRateTable, lambda0: float) -> np.ndarray:
    limit = math.log(2.0) / lambda0 + 2.0
    return np.array([d for d in table.degrees if d <= limit])


def lambda_gap(table: GrowthRateTable, lam: float, lambda0: float) -> float:
    """min_k |ln2/lam + 1 + mu_k| over the degrees eligible for lambda0."""
    degrees = _eligible(table, lambda0)
    if degrees.size == 0:
        return math.inf
    return float(np.min(np.abs(math.log(2.0) / lam + 1.0 - degrees)))


def select_lambda(table: GrowthRateTable, lambda0: float, C1: float) -> float:
    """
    Choose lambda in [lambda0/2, lambda0] whose growth rate ln2/lambda + 1
    is best separated from the tabulated degrees.

    Args:
        table: Invariant growth rate table
        lambda0: Upper end of the search interval, in (0, 1/2)
        C1: Weyl constant; the gap must reach lambda^(n-2)/C1

    Returns:
        The selected lambda (largest maximizer on the grid)
    """
    if not 0.0 < lambda0 < 0.5:
        raise ValueError(f"lambda0 must lie in (0, 1/2), got {lambda0}")
    if C1 <= 0:
        raise ValueError(f"C1 must be positive, got {C1}")

    candidates = np.linspace(lambda0 / 2.0, lambda0, LAMBDA_GRID_POINTS)
    degrees = _eligible(table, lambda0)
    if degrees.size == 0:
        gaps = np.full(candidates.shape, np.inf)
    else:
        rates = math.log(2.0) / candidates + 1.0
        gaps = np.min(np.abs(rates[:, None] - degrees[None, :]), axis=1)

    # Reverse so ties go to the largest lambda
    best = len(candidates) - 1 - int(np.argmax(gaps[::-1]))
    lam = float(candidates[best])
    n = table.n if table.n else 0
    required = lam ** (n - 2) / C1
    if gaps[best] < required:
        raise GapUnattainable(
            f"best gap {gaps[best]:.3e} at lambda={lam:.6f} is below {required:.3e}",
            best_gap=float(gaps[best]),
        )
    return lam


def spectrum_report(cone: QuadraticCone, j_max: int = 2, k_max: int = 2) -> Dict[str, Any]:
    """JSON-ready spectral table."""
    pairs = link_eigenvalues(cone, j_max, k_max)
    return {
        "p": cone.p,
        "q": cone.q,
        "gamma": cone.gamma,
        "n": cone.n,
        "alpha": cone.alpha,
        "stability_margin": stability_margin(cone),
        "forbidden_interval": list(forbidden_interval(cone)),
        "pairs": [{"lambda": pr.lambda_i, "gm": pr.gamma_minus, "gp": pr.gamma_plus}
                  for pr in pairs],
    }
