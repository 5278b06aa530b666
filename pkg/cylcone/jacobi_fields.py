"""Invariant Jacobi fields on C x R, their L2 norms and the three annulus lemmas."""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import List, Dict, Any, Optional, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import beta as beta_fn
from rich.console import Console

from .config import (
    THREADS, DEFAULT_SEED, QUADRATURE_NODES, SUITE_MAX_MODES, RECURRENCE_TOL, BOUNDARY_TOL,
)
from .cone_spectra import QuadraticCone, invariant_growth_rates
from .errors import DegenerateRecurrence, DivergentNorm, HypothesisFail

console = Console()

Number = Union[float, Fraction]


@dataclass(frozen=True)
class JacobiFieldExpansion:
    """
    An invariant function on C x R.

    Monomial form: terms (k, l, coef) standing for coef * r^(2k - gamma) * y^l.
    Mode form: modes (degree, coef) standing for coef * rho^degree * Phi.
    """
    cone: QuadraticCone
    terms: Tuple[Tuple[int, int, float], ...] = ()
    modes: Tuple[Tuple[float, float], ...] = ()
    exact: bool = False  # coefficients came from rational arithmetic

    @property
    def form(self) -> str:
        return "mode" if self.modes else "monomial"

    @property
    def coef_norm(self) -> float:
        coefs = [c for _, _, c in self.terms] or [c for _, c in self.modes]
        return math.sqrt(sum(c * c for c in coefs))

    def scaled(self, factor: float) -> "JacobiFieldExpansion":
        return replace(self,
                       terms=tuple((k, l, c * factor) for k, l, c in self.terms),
                       modes=tuple((d, c * factor) for d, c in self.modes))

    def to_dict(self) -> Dict[str, Any]:
        if self.form == "mode":
            terms = [{"degree": d, "coef": c} for d, c in self.modes]
        else:
            terms = [{"k": k, "l": l, "coef": c} for k, l, c in self.terms]
        return {"form": self.form, "terms": terms}


@dataclass(frozen=True)
class AnnulusNormSeq:
    """||u||_{rho0,i}, the rho^-n weighted L2 norms on B_{rho0^i} minus B_{rho0^(i+1)}."""
    rho0: float
    norms: Tuple[float, ...]


class ThreeAnnulusCase(Enum):
    CASE_I = "CaseI"
    CASE_II = "CaseII"
    BOTH = "Both"
    NEITHER = "Neither"


@dataclass(frozen=True)
class ThreeAnnulusReport:
    """Hypotheses, conclusions and implications of the two-sided annulus lemma."""
    case: ThreeAnnulusCase
    hypothesis_i: bool
    conclusion_i: bool
    hypothesis_ii: bool
    conclusion_ii: bool

    @property
    def implication_i(self) -> bool:
        return (not self.hypothesis_i) or self.conclusion_i

    @property
    def implication_ii(self) -> bool:
        return (not self.hypothesis_ii) or self.conclusion_ii


@dataclass(frozen=True)
class QuantitativeReport:
    """Outcome of the convexity estimate ||u||_{B_{e^-lam}} <= (1 - lam^A) e^{-(n+2)lam/2}."""
    lam: float
    A: float
    norm_outer: float
    norm_middle: float
    norm_inner: float
    bound: float
    margin: float

    @property
    def holds(self) -> bool:
        return self.margin >= 0


def _gamma_value(cone: QuadraticCone) -> Number:
    """gamma as a Fraction when the indicial discriminant is a perfect square."""
    n = cone.n
    disc = (n - 3) ** 2 - 4 * (n - 2)
    root = math.isqrt(disc)
    if root * root == disc:
        return Fraction((n - 3) - root, 2)
    return cone.gamma


def _c_value(cone: QuadraticCone, a: Number) -> Number:
    n = cone.n
    return a * a + (n - 3) * a - (n - 2 - 2 * (n - 2))


def ujacobi_coeffs(cone: QuadraticCone, l: int, warn: bool = True) -> JacobiFieldExpansion:
    """
    The Jacobi field u_l = sum_k a_k r^(2k - gamma) y^(l - 2k), a_0 = 1.

    Args:
        cone: The quadratic cone
        l: Degree in y, l >= 0
        warn: Report l - gamma <= 1

    Returns:
        Monomial JacobiFieldExpansion
    """
    if l < 0:
        raise ValueError(f"l must be nonnegative, got {l}")
    if warn and l - cone.gamma <= 1:
        console.print(f"[yellow]Warning: l - gamma = {l - cone.gamma:.4f} <= 1; "
                      f"outside the standing assumption for gluing[/yellow]")
    g = _gamma_value(cone)
    exact = isinstance(g, Fraction)
    coefs: List[Number] = [Fraction(1) if exact else 1.0]
    for k in range(l // 2):
        c = _c_value(cone, 2 * (k + 1) - g)
        if c == 0:
            raise DegenerateRecurrence(f"c_(2k-gamma) vanishes at k={k + 1}")
        coefs.append(-(l - 2 * k) * (l - 2 * k - 1) * coefs[-1] / c)
    terms = tuple((k, l - 2 * k, float(a)) for k, a in enumerate(coefs))
    result = JacobiFieldExpansion(cone=cone, terms=terms, exact=exact)

    if not exact:
        residual = apply_cylinder_jacobi(result)
        worst = max((abs(c) for _, _, c in residual.terms), default=0.0)
        if worst > RECURRENCE_TOL * result.coef_norm:
            raise DegenerateRecurrence(f"recurrence residual {worst:.3e} for l={l}")
    return result


def apply_cylinder_jacobi(field: JacobiFieldExpansion) -> JacobiFieldExpansion:
    """
    L_{C x R} applied term by term:
    L(r^a y^l) = c_a r^(a-2) y^l + l(l-1) r^a y^(l-2).
    """
    if field.form != "monomial":
        raise ValueError("apply_cylinder_jacobi needs a monomial expansion")
    cone = field.cone
    out: Dict[Tuple[int, int], float] = {}
    for k, l, c in field.terms:
        a = 2 * k - cone.gamma
        ca = cone.c_coefficient(a)
        key = (k - 1, l)
        out[key] = out.get(key, 0.0) + c * ca
        if l >= 2:
            key = (k, l - 2)
            out[key] = out.get(key, 0.0) + c * l * (l - 1)
    # Cancellations below rounding of the input coefficients are dropped
    scale = max(field.coef_norm, 1.0) * 1e-14
    terms = tuple(sorted((k, l, c) for (k, l), c in out.items() if abs(c) > scale))
    return JacobiFieldExpansion(cone=cone, terms=terms)


def evaluate_field(field: JacobiFieldExpansion, r, y) -> Dict[str, np.ndarray]:
    """
    Value and first derivatives of a monomial field at (r, y), r > 0.

    Returns:
        Dict with "u", "du_dr", "du_dy"
    """
    if field.form != "monomial":
        raise ValueError("evaluate_field needs a monomial expansion")
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    g = field.cone.gamma
    u = np.zeros(np.broadcast(r, y).shape)
    ur = np.zeros_like(u)
    uy = np.zeros_like(u)
    for k, l, c in field.terms:
        a = 2 * k - g
        ra = r ** a
        yl = y ** l
        u += c * ra * yl
        ur += c * a * r ** (a - 1) * yl
        if l > 0:
            uy += c * l * ra * y ** (l - 1)
    return {"u": u, "du_dr": ur, "du_dy": uy}


def mode_field(cone: QuadraticCone, modes) -> JacobiFieldExpansion:
    """Mode-form field from (degree, coef) pairs; degrees must be invariant growth rates."""
    modes = tuple((float(d), float(c)) for d, c in modes)
    if modes:
        table = invariant_growth_rates(cone, max(d for d, _ in modes) + 1e-9)
        for d, _ in modes:
            if not table.contains(d):
                raise ValueError(f"degree {d} is not an invariant growth rate of the cone")
    return JacobiFieldExpansion(cone=cone, modes=modes)


def link_volume(cone: QuadraticCone) -> float:
    """B = integral of cos^(n-2) phi over (-pi/2, pi/2)."""
    return float(beta_fn(0.5, (cone.n - 1) / 2.0))


def _angular_rule(cone: QuadraticCone, nodes: int = QUADRATURE_NODES):
    x, w = np.polynomial.legendre.leggauss(nodes)
    phi = 0.5 * math.pi * x
    weight = 0.5 * math.pi * w * np.cos(phi) ** (cone.n - 2)
    return phi, weight


def homogeneous_mode(field: JacobiFieldExpansion) -> JacobiFieldExpansion:
    """
    Rewrite a homogeneous monomial field as a single mode c * rho^d * Phi.

    c is fixed by the link integral of |u|^2 against the normalized measure.
    """
    cone = field.cone
    if field.form == "mode":
        return field
    degrees = {round(2 * k - cone.gamma + l, 12) for k, l, _ in field.terms}
    if len(degrees) != 1:
        raise ValueError(f"field is not homogeneous: degrees {sorted(degrees)}")
    degree = degrees.pop()
    phi, weight = _angular_rule(cone)
    u = evaluate_field(field, np.cos(phi), np.sin(phi))["u"]
    c = math.sqrt(float(np.sum(weight * u * u)) / link_volume(cone))
    return JacobiFieldExpansion(cone=cone, modes=((degree, c),))


def _check_integrable(field: JacobiFieldExpansion):
    n = field.cone.n
    for d, _ in field.modes:
        if 2 * d + n <= 0:
            raise DivergentNorm(f"degree {d} is not square integrable at the origin (n={n})")


def ball_norm(field: JacobiFieldExpansion, s: float) -> float:
    """
    ||u||_{L2(B_s)} for 0 < s <= 1.

    Mode form is evaluated in closed form with V = n, so the constant field
    has unit norm on B_1; monomial form uses polar Gauss-Legendre quadrature.
    """
    if not 0 < s <= 1:
        raise ValueError(f"radius must lie in (0, 1], got {s}")
    n = field.cone.n
    if field.form == "monomial":
        return _monomial_ball_norm(field, s)
    _check_integrable(field)
    total = sum(n * c * c * s ** (2 * d + n) / (2 * d + n) for d, c in field.modes)
    return math.sqrt(total)


def _monomial_ball_norm(field: JacobiFieldExpansion, s: float) -> float:
    cone = field.cone
    phi, wphi = _angular_rule(cone)
    x, wx = np.polynomial.legendre.leggauss(QUADRATURE_NODES)
    rho = 0.5 * s * (x + 1.0)
    wrho = 0.5 * s * wx * rho ** (cone.n - 1)
    R, P = np.meshgrid(rho, phi, indexing="ij")
    u = evaluate_field(field, R * np.cos(P), R * np.sin(P))["u"]
    integral = float(np.einsum("i,j,ij->", wrho, wphi, u * u))
    return math.sqrt(cone.n / link_volume(cone) * integral)


def ball_norm_quadrature(field: JacobiFieldExpansion, s: float) -> float:
    """Adaptive radial quadrature of the mode-form ball norm."""
    _check_integrable(field)
    n = field.cone.n
    modes = field.modes

    def integrand(rho):
        return n * sum(c * c * rho ** (2 * d + n - 1) for d, c in modes)

    value, _ = quad(integrand, 0.0, s, epsabs=0.0, epsrel=1e-13, limit=200)
    return math.sqrt(value)


def annulus_norms(field: JacobiFieldExpansion, rho0: float, imax: int) -> AnnulusNormSeq:
    """
    Annulus norms ||u||_{rho0,i} for i = 0..imax.

    Args:
        field: Mode or monomial field
        rho0: Ratio in (0, 1)
        imax: Last annulus index

    Returns:
        AnnulusNormSeq
    """
    if not 0 < rho0 < 1:
        raise ValueError(f"rho0 must lie in (0, 1), got {rho0}")
    cone = field.cone
    n = cone.n
    norms = []
    if field.form == "mode":
        _check_integrable(field)
        for i in range(imax + 1):
            sq = 0.0
            for d, c in field.modes:
                if d == 0:
                    sq += n * c * c * math.log(1.0 / rho0)
                else:
                    sq += n * c * c * (rho0 ** (2 * d * i) - rho0 ** (2 * d * (i + 1))) / (2 * d)
            norms.append(math.sqrt(sq))
        return AnnulusNormSeq(rho0=rho0, norms=tuple(norms))

    phi, wphi = _angular_rule(cone)
    x, wx = np.polynomial.legendre.leggauss(QUADRATURE_NODES)
    scale = n / link_volume(cone)
    for i in range(imax + 1):
        lo, hi = (i + 1) * math.log(rho0), i * math.log(rho0)
        t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        wt = 0.5 * (hi - lo) * wx
        T, P = np.meshgrid(np.exp(t), phi, indexing="ij")
        u = evaluate_field(field, T * np.cos(P), T * np.sin(P))["u"]
        norms.append(math.sqrt(scale * float(np.einsum("i,j,ij->", wt, wphi, u * u))))
    return AnnulusNormSeq(rho0=rho0, norms=tuple(norms))


def three_annulus_report(seq: AnnulusNormSeq, d: float, alpha0: float,
                         alpha0p: float) -> ThreeAnnulusReport:
    """Evaluate both hypotheses and conclusions on annuli 0, 1, 2."""
    if len(seq.norms) < 3:
        raise ValueError("three annulus check needs at least three annuli")
    if not alpha0p > alpha0 > 0:
        raise ValueError(f"need alpha0' > alpha0 > 0, got {alpha0p}, {alpha0}")
    n0, n1, n2 = seq.norms[:3]
    r = seq.rho0
    hyp_i = n1 >= r ** (d - alpha0) * n0
    concl_i = n2 >= r ** (d - alpha0p) * n1
    hyp_ii = n1 >= r ** (-d - alpha0) * n2
    concl_ii = n0 >= r ** (-d - alpha0p) * n1
    if concl_i and concl_ii:
        case = ThreeAnnulusCase.BOTH
    elif concl_i:
        case = ThreeAnnulusCase.CASE_I
    elif concl_ii:
        case = ThreeAnnulusCase.CASE_II
    else:
        case = ThreeAnnulusCase.NEITHER
    return ThreeAnnulusReport(case=case, hypothesis_i=hyp_i, conclusion_i=concl_i,
                              hypothesis_ii=hyp_ii, conclusion_ii=concl_ii)


def three_annulus_check(seq: AnnulusNormSeq, d: float, alpha0: float,
                        alpha0p: float) -> ThreeAnnulusCase:
    """Which conclusions of the annulus lemma hold for the sequence."""
    return three_annulus_report(seq, d, alpha0, alpha0p).case


def quantitative_three_annulus(field: JacobiFieldExpansion, lam: float,
                               A: float) -> QuantitativeReport:
    """
    Check ||u||_{B_{e^-lam}} <= (1 - lam^A) e^{-(n+2)lam/2} under the hypotheses
    ||u||_{B_1} <= 2 and ||u||_{B_{e^{-2 lam}}} <= e^{-(n+2)lam}/2.

    Raises:
        HypothesisFail: if either hypothesis is violated
    """
    n = field.cone.n
    outer = ball_norm(field, 1.0)
    middle = ball_norm(field, math.exp(-lam))
    inner = ball_norm(field, math.exp(-2.0 * lam))
    inner_bound = 0.5 * math.exp(-(n + 2) * lam)
    if outer > 2.0 * (1.0 + BOUNDARY_TOL):
        raise HypothesisFail(f"||u||_L2(B_1) = {outer:.6g} exceeds 2")
    if inner > inner_bound * (1.0 + BOUNDARY_TOL):
        raise HypothesisFail(f"||u||_L2(B_e^-2lam) = {inner:.6g} exceeds {inner_bound:.6g}")
    bound = (1.0 - lam ** A) * math.exp(-(n + 2) * lam / 2.0)
    return QuantitativeReport(lam=lam, A=A, norm_outer=outer, norm_middle=middle,
                              norm_inner=inner, bound=bound, margin=bound - middle)


def scale_to_hypotheses(field: JacobiFieldExpansion, lam: float) -> JacobiFieldExpansion:
    """Rescale a field so the tighter of the two ball hypotheses is saturated."""
    n = field.cone.n
    outer = ball_norm(field, 1.0)
    inner = ball_norm(field, math.exp(-2.0 * lam))
    if outer == 0:
        return field
    factor = min(2.0 / outer, 0.5 * math.exp(-(n + 2) * lam) / inner)
    return field.scaled(factor)


def smallest_exponent_A(fields: List[JacobiFieldExpansion], lam: float) -> float:
    """Least A with ||u||_{B_{e^-lam}} <= (1 - lam^A) e^{-(n+2)lam/2} for every field."""
    if not 0 < lam < 1:
        raise ValueError(f"lam must lie in (0, 1), got {lam}")
    A = 0.0
    for f in fields:
        n = f.cone.n
        ratio = ball_norm(f, math.exp(-lam)) / math.exp(-(n + 2) * lam / 2.0)
        if ratio >= 1.0:
            return math.inf
        if ratio > 0:
            A = max(A, math.log(1.0 - ratio) / math.log(lam))
    return A


def _random_mode(cone: QuadraticCone, degrees: np.ndarray, seed: int, index: int,
                 max_modes: int) -> JacobiFieldExpansion:
    rng = np.random.default_rng([seed, index])
    count = int(rng.integers(1, min(max_modes, len(degrees)) + 1))
    chosen = rng.choice(degrees, size=count, replace=False)
    coefs = rng.uniform(-1.0, 1.0, size=count)
    return JacobiFieldExpansion(cone=cone, modes=tuple(sorted(zip(chosen.tolist(), coefs.tolist()))))


def random_mode_suite(cone: QuadraticCone, count: int, seed: int = DEFAULT_SEED,
                      max_modes: int = SUITE_MAX_MODES, cutoff: float = 10.0,
                      exclude_degree: Optional[float] = None) -> List[JacobiFieldExpansion]:
    """
    Seeded random mode-form fields with at most max_modes invariant degrees.

    Each instance draws from its own generator seeded by (seed, index), so the
    suite is independent of the worker count.
    """
    table = invariant_growth_rates(cone, cutoff)
    degrees = np.array(table.degrees)
    if exclude_degree is not None:
        degrees = degrees[np.abs(degrees - exclude_degree) > 1e-9]
    with ThreadPoolExecutor(max_workers=THREADS) as pool:
        return list(pool.map(lambda i: _random_mode(cone, degrees, seed, i, max_modes),
                             range(count)))


def log_convexity_profile(field: JacobiFieldExpansion, t_grid) -> List[float]:
    """Second differences of t -> ln ||u||^2_{L2(B_{e^-t})} on a uniform grid."""
    values = [2.0 * math.log(ball_norm(field, math.exp(-t))) for t in t_grid]
    return [values[i - 1] - 2.0 * values[i] + values[i + 1] for i in range(1, len(values) - 1)]


def random_ujacobi_field(cone: QuadraticCone, rng: np.random.Generator,
                         l_max: int = 6) -> JacobiFieldExpansion:
    """Random linear combination of u_0, ..., u_{l_max}."""
    terms: Dict[Tuple[int, int], float] = {}
    for l in range(l_max + 1):
        weight = rng.uniform(-1.0, 1.0)
        base = ujacobi_coeffs(cone, l, warn=False)
        for k, power, c in base.terms:
            terms[(k, power)] = terms.get((k, power), 0.0) + weight * c
    return JacobiFieldExpansion(cone=cone, terms=tuple((k, l, c) for (k, l), c in sorted(terms.items())))


def l2_linfty_constant(cone: QuadraticCone, cases: int = 50, seed: int = DEFAULT_SEED,
                       grid: int = 64) -> float:
    """
    Empirical constant C in sup_{B_1/2} |r^gamma u| <= C ||u||_{L2(B_1)}
    over random combinations of the fields u_l.
    """
    rng = np.random.default_rng(seed)
    rho = np.linspace(0.0, 0.5, grid + 1)[1:]
    phi = np.linspace(-0.5 * math.pi, 0.5 * math.pi, grid + 2)[1:-1]
    R, P = np.meshgrid(rho, phi, indexing="ij")
    r, y = R * np.cos(P), R * np.sin(P)
    worst = 0.0
    for _ in range(cases):
        f = random_ujacobi_field(cone, rng)
        sup = float(np.max(np.abs(r ** cone.gamma * evaluate_field(f, r, y)["u"])))
        worst = max(worst, sup / ball_norm(f, 1.0))
    return worst
