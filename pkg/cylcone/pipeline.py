"""Run configuration and per-command pipelines."""
import json
import math
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Dict, Any, Optional, List, Tuple, Callable

import numpy as np
from rich.console import Console

from .config import (
    OUTPUT_DIR, DEFAULT_SEED, Q_REG, P_BARRIER, Q_BARRIER, GRID_SLICE, GRID_HEIGHT,
    NEWTON_REDUCTION, RECURRENCE_TOL,
)
from .errors import (
    CylconeError, CertificateFailure, ConfigError, HypothesisFail, NotGraphical, ReportFailed,
)
from .cone_spectra import (
    make_cone, spectrum_report, link_eigenvalues, indicial_residual, invariant_growth_rates,
    select_lambda, lambda_gap, sturm_liouville_link_eigenvalues,
)
from .foliation import (
    build_foliation, profile_residual, fitted_decay_exponent, graph_decay_exponents, leaf_parameter,
)
from .jacobi_fields import (
    ujacobi_coeffs, apply_cylinder_jacobi, homogeneous_mode, annulus_norms, three_annulus_report,
    random_mode_suite, scale_to_hypotheses, quantitative_three_annulus, smallest_exponent_A,
)
from .glue_solver import (
    CurvatureField, make_weights, build_X_halves, halves_to_rows, mean_curvature,
    weighted_certificate, newton_solve_T, quadratic_remainder_check, graph_over_leaf,
    symmetry_defect,
)
from .continuation_lab import (
    cone_samples, graph_samples, field_graph, doubling_sequence, build_barrier_Xeps, blowup_degree,
)
from .reports import write_csv, write_json, write_error, write_varifold, read_varifold

console = Console()

COMMANDS = ("spectrum", "leaf", "jacobi", "three-annulus", "glue", "solve", "barrier",
            "doubling", "degree")

# Dotted path of every field in a sectioned JSON config
FIELD_PATHS = {
    "p": "cone.p", "q": "cone.q",
    "lambda0": "spectrum.lambda0", "C1": "spectrum.C1",
    "side": "leaf.side",
    "l": "jacobi.l",
    "cases": "three_annulus.cases",
    "beta": "glue.beta", "A": "glue.A", "delta": "glue.delta", "tau": "glue.tau",
    "grid_slice": "glue.grid_slice", "grid_height": "glue.grid_height",
    "eps": "barrier.eps", "K": "barrier.K", "Q": "barrier.Q", "p_barrier": "barrier.p_barrier",
    "f": "barrier.f", "sampled": "barrier.sampled",
    "samples": "doubling.samples", "step": "doubling.step", "steps": "doubling.steps",
    "qreg": "doubling.qreg",
    "scales": "degree.scales", "r_min": "degree.r_min", "amplitude": "degree.amplitude",
    "seed": "seed", "output_dir": "output_dir", "command": "command",
}


@dataclass
class RunConfig:
    """Resolved parameters of one run; every report embeds it."""
    command: str
    p: int = 3
    q: int = 3
    l: int = 7
    beta: float = 1.5
    A: float = 2.0
    delta: Optional[float] = None
    tau: Optional[float] = None
    lambda0: float = 0.1
    C1: float = 1.0
    qreg: float = Q_REG
    seed: int = DEFAULT_SEED
    output_dir: str = str(OUTPUT_DIR)
    side: str = "plus"
    cases: int = 1000
    grid_slice: int = GRID_SLICE
    grid_height: int = GRID_HEIGHT  # both halves together
    eps: float = 1e-30
    K: float = 9.0
    Q: float = Q_BARRIER
    p_barrier: int = P_BARRIER
    f: float = 4.0
    sampled: bool = False  # certify X_eps with mean_curvature on a slice frame
    samples: Optional[str] = None
    step: float = 0.25
    steps: int = 6
    scales: List[float] = field(default_factory=lambda: [1.0, 1.25, 1.5])
    r_min: float = 0.1
    amplitude: float = 1e-5

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _load_config_file(path: Path) -> Dict[str, Any]:
    """Flatten a flat or sectioned JSON config, checking every key."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path.name}: invalid JSON ({e})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path.name}: top level must be an object")
    by_path = {v: k for k, v in FIELD_PATHS.items()}
    flat = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            for sub, subvalue in value.items():
                name = by_path.get(f"{key}.{sub}")
                if name is None:
                    raise ConfigError(f"{key}.{sub}: unknown field")
                flat[name] = subvalue
        elif key in FIELD_PATHS:
            flat[key] = value
        else:
            raise ConfigError(f"{key}: unknown field")
    return flat


def resolve_config(command: str, config_file: Optional[Path] = None,
                   overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Defaults, then the JSON file, then flags that were given.

    Raises:
        ConfigError: unknown command, unknown field or invalid value
    """
    if command not in COMMANDS:
        raise ConfigError(f"command: unknown command {command!r}")
    values = _load_config_file(config_file) if config_file else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values["command"] = command
    known = {f.name for f in fields(RunConfig)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{FIELD_PATHS.get(key, key)}: unknown field")
    try:
        config = RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e))
    validate_config(config)
    return config


def _check(errors: List[str], ok: bool, name: str, message: str):
    if not ok:
        errors.append(f"{FIELD_PATHS[name]}: {message}")


def _is_int(value) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool)


def validate_config(config: RunConfig):
    """Per-command schema; all violations are reported together."""
    errors: List[str] = []
    c = config
    _check(errors, _is_int(c.p) and c.p >= 1, "p", f"must be an integer >= 1, got {c.p!r}")
    _check(errors, _is_int(c.q) and c.q >= 1, "q", f"must be an integer >= 1, got {c.q!r}")
    _check(errors, _is_int(c.seed), "seed", f"must be an integer, got {c.seed!r}")
    cmd = c.command
    if cmd == "spectrum" or cmd == "three-annulus":
        _check(errors, _is_number(c.lambda0) and 0 < c.lambda0 < 0.5, "lambda0",
               f"must lie in (0, 1/2), got {c.lambda0!r}")
        _check(errors, _is_number(c.C1) and c.C1 > 0, "C1", f"must be positive, got {c.C1!r}")
    if cmd == "leaf":
        _check(errors, c.side in ("plus", "minus"), "side", f"must be 'plus' or 'minus', got {c.side!r}")
    if cmd in ("jacobi", "glue", "solve", "degree"):
        _check(errors, _is_int(c.l) and c.l >= 0, "l", f"must be an integer >= 0, got {c.l!r}")
    if cmd == "three-annulus":
        _check(errors, _is_int(c.cases) and c.cases >= 1, "cases", f"must be a positive integer, got {c.cases!r}")
        _check(errors, _is_number(c.A) and c.A > 0, "A", f"must be positive, got {c.A!r}")
    if cmd in ("glue", "solve"):
        _check(errors, _is_number(c.beta) and c.beta > 1, "beta", f"must exceed 1, got {c.beta!r}")
        _check(errors, _is_number(c.A) and c.A > 1, "A", f"must exceed 1, got {c.A!r}")
        _check(errors, _is_int(c.grid_slice) and c.grid_slice >= 8, "grid_slice",
               f"must be an integer >= 8, got {c.grid_slice!r}")
        _check(errors, _is_int(c.grid_height) and c.grid_height >= 16 and c.grid_height % 2 == 0,
               "grid_height", f"must be an even integer >= 16, got {c.grid_height!r}")
        for name in ("delta", "tau"):
            value = getattr(c, name)
            _check(errors, value is None or _is_number(value), name, f"must be a number, got {value!r}")
    if cmd == "barrier":
        _check(errors, _is_number(c.eps) and c.eps > 0, "eps", f"must be positive, got {c.eps!r}")
        _check(errors, _is_int(c.p_barrier) and c.p_barrier % 2 == 1 and c.p_barrier > 0,
               "p_barrier", f"must be an odd positive integer, got {c.p_barrier!r}")
        _check(errors, _is_number(c.K) and _is_number(c.Q) and c.K > c.Q, "K",
               f"must exceed Q, got K={c.K!r}, Q={c.Q!r}")
        _check(errors, _is_number(c.f) and c.f != 0, "f", f"must be a nonzero number, got {c.f!r}")
        _check(errors, isinstance(c.sampled, bool), "sampled", f"must be true or false, got {c.sampled!r}")
    if cmd == "doubling":
        _check(errors, _is_number(c.qreg) and 0 < c.qreg < 0.5, "qreg", f"must lie in (0, 1/2), got {c.qreg!r}")
        _check(errors, _is_number(c.step) and c.step > 0, "step", f"must be positive, got {c.step!r}")
        _check(errors, _is_int(c.steps) and c.steps >= 1, "steps", f"must be a positive integer, got {c.steps!r}")
    if cmd == "degree":
        _check(errors, isinstance(c.scales, list) and len(c.scales) > 0
               and all(_is_number(s) and s > 0 for s in c.scales), "scales",
               f"must be a nonempty list of positive numbers, got {c.scales!r}")
        _check(errors, _is_number(c.r_min) and 0 < c.r_min < 1, "r_min", f"must lie in (0, 1), got {c.r_min!r}")
    if errors:
        raise ConfigError("; ".join(errors))


def _resolve_samples(config: RunConfig) -> Path:
    path = Path(config.samples)
    if not path.is_absolute() and (config.out / path).exists():
        return config.out / path
    return path


# ---------------------------------------------------------------------------
# Commands. Each returns (summary, passed).
# ---------------------------------------------------------------------------

def _run_spectrum(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/3: Building Cone[/bold]")
    cone = make_cone(c.p, c.q)
    console.print(f"  [green]✓[/green] n = {cone.n}, gamma = {cone.gamma:.12g}")

    console.print("\n[bold]Step 2/3: Link Spectrum[/bold]")
    report = spectrum_report(cone)
    pairs = link_eigenvalues(cone, 2, 2)
    report["max_indicial_residual"] = max(indicial_residual(cone, pr) for pr in pairs)
    oracle = float(sturm_liouville_link_eigenvalues(cone, "p", 1)[0])
    report["sturm_liouville_lambda1"] = oracle
    console.print(f"  lambda_1 = {cone.lambda1:g} (finite differences: {oracle:.6g})")

    console.print("\n[bold]Step 3/3: Selecting Lambda[/bold]")
    table = invariant_growth_rates(cone, 10.0)
    lam = select_lambda(table, c.lambda0, c.C1)
    report["lambda"] = lam
    report["lambda_gap"] = lambda_gap(table, lam, c.lambda0)
    console.print(f"  [green]✓[/green] lambda = {lam:.6g}, gap = {report['lambda_gap']:.4g}")
    write_json(c.out / "spectrum.json", report, c.to_dict())
    return report, True


def _run_leaf(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/3: Solving Leaves[/bold]")
    cone = make_cone(c.p, c.q)
    table = build_foliation(cone)
    leaf = table.leaf(c.side)

    console.print("\n[bold]Step 2/3: Leaf Diagnostics[/bold]")
    residual = profile_residual(leaf)
    exponent = fitted_decay_exponent(leaf)
    sign = 1.0 if c.side == "plus" else -1.0
    idx = np.linspace(1, len(leaf.s) // 4, 50).astype(int)
    t = np.asarray(leaf_parameter(table, leaf.u[idx], leaf.v[idx]))
    round_trip = float(np.max(np.abs(t - sign)))
    summary = dict(leaf.to_dict())
    summary.update({"profile_residual": residual, "decay_exponent": exponent,
                    "graph_decay_exponents": graph_decay_exponents(leaf),
                    "leaf_parameter_round_trip": round_trip, "axis_radius": leaf.axis_radius})
    console.print(f"  residual {residual:.3e}, decay exponent {exponent:.5g}, "
                  f"round trip {round_trip:.3e}")

    console.print("\n[bold]Step 3/3: Writing Profile[/bold]")
    write_csv(c.out / f"leaf_{c.side}.csv", ("s", "u", "v", "theta"), leaf.samples.tolist())
    write_json(c.out / f"leaf_{c.side}.json", summary, c.to_dict())
    return summary, residual < 1e-6


def _run_jacobi(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/2: Jacobi Field Recurrence[/bold]")
    cone = make_cone(c.p, c.q)
    jac = ujacobi_coeffs(cone, c.l)
    residual = apply_cylinder_jacobi(jac)
    worst = max((abs(v) for _, _, v in residual.terms), default=0.0)
    console.print(f"  [green]✓[/green] {len(jac.terms)} terms, residual {worst:.3e}")

    console.print("\n[bold]Step 2/2: Annulus Norms[/bold]")
    degree = c.l - cone.gamma
    mode = homogeneous_mode(jac)
    seq = annulus_norms(jac, 0.5, 2)
    ta = three_annulus_report(seq, degree, 0.1, 0.2)
    summary = {"field": jac.to_dict(), "exact": jac.exact, "residual": worst,
               "degree": degree, "mode": mode.to_dict(), "annulus_norms": list(seq.norms),
               "three_annulus": {"case": ta.case.value, "implication_i": ta.implication_i,
                                 "implication_ii": ta.implication_ii}}
    write_json(c.out / "jacobi.json", summary, c.to_dict())
    return summary, worst <= RECURRENCE_TOL * max(jac.coef_norm, 1.0)


def _run_three_annulus(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/3: Selecting Lambda[/bold]")
    cone = make_cone(c.p, c.q)
    table = invariant_growth_rates(cone, 10.0)
    lam = select_lambda(table, c.lambda0, c.C1)
    console.print(f"  [green]✓[/green] lambda = {lam:.6g}")

    console.print(f"\n[bold]Step 2/3: Building {c.cases} Random Fields[/bold]")
    suite = [scale_to_hypotheses(f, lam) for f in random_mode_suite(cone, c.cases, c.seed)]

    console.print("\n[bold]Step 3/3: Checking the Quantitative Bound[/bold]")
    rows, failures, skipped = [], 0, 0
    for i, fld in enumerate(suite):
        try:
            rep = quantitative_three_annulus(fld, lam, c.A)
        except HypothesisFail:
            skipped += 1
            rows.append((i, math.nan, True))
            continue
        failures += 0 if rep.holds else 1
        rows.append((i, rep.margin, rep.holds))
    write_csv(c.out / "three_annulus.csv", ("case", "margin", "pass"), rows)
    summary = {"lambda": lam, "A": c.A, "cases": c.cases, "failures": failures,
               "skipped": skipped, "smallest_A": smallest_exponent_A(suite, lam)}
    write_json(c.out / "three_annulus.json", summary, c.to_dict())
    if failures:
        console.print(f"  [yellow]Warning: {failures} of {c.cases} cases fail[/yellow]")
    else:
        console.print(f"  [green]✓[/green] all {c.cases} cases pass ({skipped} outside the hypotheses)")
    return summary, failures == 0


def _glue_setup(c: RunConfig):
    cone = make_cone(c.p, c.q)
    table = build_foliation(cone)
    spec = make_weights(cone, c.l, c.delta, c.tau)
    halves = build_X_halves(table, c.l, c.beta, c.A, grid=(c.grid_slice, c.grid_height))
    return cone, table, spec, halves


def _surface_sidecar(c: RunConfig, spec, halves) -> Dict[str, Any]:
    upper, lower = halves
    return {"p": c.p, "q": c.q, "l": c.l, "beta": c.beta, "A": c.A, "delta": spec.delta,
            "tau": spec.tau, "grid": [upper.shape[0], upper.shape[1] + lower.shape[1]],
            "y_gap": float(np.min(np.abs(upper.frame.y)))}


def _run_glue(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/3: Building X[/bold]")
    cone, table, spec, halves = _glue_setup(c)
    upper, lower = halves
    console.print(f"  [green]✓[/green] grid {upper.shape[0]} x {upper.shape[1] + lower.shape[1]}, "
                  f"rho < {upper.meta['rho_max']:.4g}")

    console.print("\n[bold]Step 2/3: Mean Curvature Certificate[/bold]")
    field_m = CurvatureField.concat([mean_curvature(lower), mean_curvature(upper)])
    cert = weighted_certificate(field_m, spec, 0.0, c.A)
    kappa_fit = -math.log(cert.sup) / math.log(c.A) if cert.sup > 0 else math.inf
    console.print(f"  sup {cert.sup:.4e} at box {cert.box}, fitted kappa {kappa_fit:.4g}")
    summary = {"sup": cert.sup, "kappa_fit": kappa_fit, "box": list(cert.box),
               "sup_r_m": field_m.scaled_sup, "weights": spec.to_dict()}
    if cone.p == cone.q and c.l % 2 == 1:
        summary["symmetry_defect"] = symmetry_defect(upper, lower)

    console.print("\n[bold]Step 3/3: Writing Surface[/bold]")
    write_csv(c.out / "X.csv", ("i", "j", "u", "v", "y", "w"), halves_to_rows(upper, lower))
    write_json(c.out / "X.json", _surface_sidecar(c, spec, halves), c.to_dict())
    write_csv(c.out / "curvature.csv", ("R", "S", "sup_term", "bound", "pass"), cert.rows)
    write_json(c.out / "glue.json", summary, c.to_dict())
    return summary, cert.passed


def _run_solve(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/3: Building X[/bold]")
    cone, table, spec, halves = _glue_setup(c)

    console.print("\n[bold]Step 2/3: Newton Correction[/bold]")
    solved, histories, drops = [], {}, []
    for X in halves:
        name = X.meta["half"]
        T = newton_solve_T(X, spec)
        history = T.meta["newton_history"]
        drops.append(history[0] / history[-1] if history[-1] > 0 else math.inf)
        histories[name] = history
        solved.append(T)
        console.print(f"  [green]✓[/green] {name} half: residual {history[0]:.3e} -> {history[-1]:.3e} "
                      f"({T.meta['newton_iterations']} iterations)")
    T_upper, T_lower = solved
    drop = min(drops)

    console.print("\n[bold]Step 3/3: Diagnostics[/bold]")
    remainder = quadratic_remainder_check(halves[0], samples=5, seed=c.seed)
    summary = {"newton_history": histories, "residual_drop": drop,
               "quadratic_exponent": remainder["min_exponent"], "weights": spec.to_dict()}
    graphs = {}
    for label, y0 in (("median", float(np.median(np.abs(T_upper.frame.y)))), ("axis", 0.0)):
        try:
            graph = graph_over_leaf(T_upper, y0)
            graphs[label] = {"y0": graph.y0, "slice_index": graph.slice_index, "base_t": graph.base_t,
                             "kappa": graph.kappa_best, "C1": graph.C1_best,
                             "decay_slope": graph.decay_slope}
        except NotGraphical as e:
            console.print(f"  [yellow]Warning: {e}[/yellow]")
            graphs[label] = {"error": str(e)}
    summary["graph_over_leaf"] = graphs
    write_csv(c.out / "T.csv", ("i", "j", "u", "v", "y", "w"), halves_to_rows(T_upper, T_lower))
    sidecar = _surface_sidecar(c, spec, solved)
    sidecar["newton_history"] = histories
    write_json(c.out / "T.json", sidecar, c.to_dict())
    write_json(c.out / "solve.json", summary, c.to_dict())
    return summary, drop >= 1.0 / NEWTON_REDUCTION


def _run_barrier(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/2: Solving Leaves[/bold]")
    table = build_foliation(make_cone(c.p, c.q))

    console.print("\n[bold]Step 2/2: Barrier Surface[/bold]")
    sample_grid = (c.grid_slice, 17) if c.sampled else None
    barrier = build_barrier_Xeps(table, lambda y: np.full_like(y, c.f, dtype=float), eps=c.eps,
                                 K=c.K, Q=c.Q, p_barrier=c.p_barrier, sample_grid=sample_grid)
    summary = barrier.to_dict()
    write_json(c.out / "barrier.json", summary, c.to_dict())
    console.print(f"  [green]✓[/green] negativity {barrier.negativity_certificate:.3e}, "
                  f"sandwich {barrier.sandwich_max:.3e}")
    return summary, True


def _load_or_build(c: RunConfig, cone, build: Callable, name: str):
    if c.samples:
        path = _resolve_samples(c)
        console.print(f"  Reading {path}")
        return read_varifold(path, cone)
    M = build()
    write_varifold(c.out, name, M, c.to_dict())
    return M


def _run_doubling(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/3: Loading Samples[/bold]")
    cone = make_cone(c.p, c.q)
    M = _load_or_build(c, cone, lambda: cone_samples(cone), "cone_samples")
    console.print(f"  [green]✓[/green] {len(M)} samples ({M.source})")

    console.print("\n[bold]Step 2/3: Solving Leaves[/bold]")
    table = build_foliation(cone)

    console.print("\n[bold]Step 3/3: Doubling Sequence[/bold]")
    report = doubling_sequence(M, table, c.step, c.steps, c.qreg)
    write_csv(c.out / "doubling.csv", ("k", "rho", "d", "flag"), report.rows)
    write_json(c.out / "doubling.json", report.to_dict(), c.to_dict())
    console.print(f"  doubling constant {report.doubling_constant:.4g}, "
                  f"degree fit {report.degree_fit:.4g}")
    return report.to_dict(), True


def _run_degree(c: RunConfig) -> Tuple[Dict[str, Any], bool]:
    console.print("[bold]Step 1/3: Loading Samples[/bold]")
    cone = make_cone(c.p, c.q)

    def build():
        jac = ujacobi_coeffs(cone, c.l)
        return graph_samples(cone, field_graph(jac, c.amplitude), r_min=c.r_min)

    M = _load_or_build(c, cone, build, f"graph_u{c.l}")
    console.print(f"  [green]✓[/green] {len(M)} samples ({M.source})")

    console.print("\n[bold]Step 2/3: Solving Leaves[/bold]")
    table = build_foliation(cone)

    console.print("\n[bold]Step 3/3: Blowup Projection[/bold]")
    expansion, degree, fits = blowup_degree(M, table, c.scales, r_min=c.r_min)
    summary = {"degree": degree, "expansion": expansion.to_dict(),
               "fits": [{k: v for k, v in fit.items() if k != "coefs"} for fit in fits]}
    write_json(c.out / "degree.json", summary, c.to_dict())
    console.print(f"  [green]✓[/green] degree {degree:.6g}")
    return summary, True


RUNNERS = {
    "spectrum": _run_spectrum,
    "leaf": _run_leaf,
    "jacobi": _run_jacobi,
    "three-annulus": _run_three_annulus,
    "glue": _run_glue,
    "solve": _run_solve,
    "barrier": _run_barrier,
    "doubling": _run_doubling,
    "degree": _run_degree,
}


def run(config: RunConfig) -> int:
    """
    Execute one command; every failure also writes error.json.

    Returns:
        0 on pass, 2 on a certificate failure or a report that did not pass,
        1 on any other cylcone, value or file error, 3 on an unexpected error
    """
    console.print(f"\n[bold blue]=== cylcone {config.command} (p={config.p}, q={config.q}) ===[/bold blue]\n")
    config.out.mkdir(parents=True, exist_ok=True)
    try:
        _, passed = RUNNERS[config.command](config)
        if not passed:
            raise ReportFailed(f"the {config.command} report did not meet its pass criterion")
    except CertificateFailure as e:
        console.print(f"[red]Error: certificate failed ({type(e).__name__}): {e}[/red]")
        write_error(config.out, config.command, e)
        return 2
    except (CylconeError, ValueError, OSError) as e:
        console.print(f"[red]Error during {config.command}: {type(e).__name__}: {e}[/red]")
        write_error(config.out, config.command, e)
        return 1
    except Exception as e:
        console.print(f"[red]Unexpected error during {config.command}: {type(e).__name__}: {e}[/red]")
        write_error(config.out, config.command, e)
        return 3
    console.print(f"\n[bold green]{config.command} complete![/bold green]")
    return 0
