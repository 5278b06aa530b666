"""Terminal CLI for cylcone."""
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console

from cylcone.config import OUTPUT_DIR
from cylcone.errors import ConfigError
from cylcone.pipeline import resolve_config, run
from cylcone.reports import write_error

app = typer.Typer(
    name="cylcone",
    help="Numerics for minimal hypersurfaces with cylindrical tangent cones",
    add_completion=False
)
console = Console()

P_OPT = typer.Option(None, "--p", help="Dimension p of the first sphere factor")
Q_OPT = typer.Option(None, "--q", help="Dimension q of the second sphere factor")
SEED_OPT = typer.Option(None, "--seed", help="Random seed")
OUT_OPT = typer.Option(None, "--out", help="Output directory")
CONFIG_OPT = typer.Option(None, "--config", help="JSON config file; flags override it")


def _execute(command: str, config_path: Optional[Path], **overrides):
    try:
        config = resolve_config(command, config_path, overrides)
    except ConfigError as e:
        console.print(f"[red]Error: invalid configuration: {e}[/red]")
        write_error(Path(overrides.get("output_dir") or OUTPUT_DIR), command, e)
        raise typer.Exit(1)
    code = run(config)
    if code:
        raise typer.Exit(code)


@app.command()
def spectrum(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    lambda0: Optional[float] = typer.Option(None, "--lambda0", help="Upper end of the lambda window"),
    C1: Optional[float] = typer.Option(None, "--C1", help="Gap constant"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Indicial roots, link spectrum and the selected lambda."""
    _execute("spectrum", config, p=p, q=q, lambda0=lambda0, C1=C1, seed=seed, output_dir=out)


@app.command()
def leaf(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    side: Optional[str] = typer.Option(None, "--side", help="plus or minus"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Solve a foliation leaf and write its profile."""
    _execute("leaf", config, p=p, q=q, side=side, seed=seed, output_dir=out)


@app.command()
def jacobi(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    l: Optional[int] = typer.Option(None, "--l", help="Degree of the Jacobi field u_l"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Coefficients of u_l with its residual and annulus norms."""
    _execute("jacobi", config, p=p, q=q, l=l, seed=seed, output_dir=out)


@app.command("three-annulus")
def three_annulus(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    lambda0: Optional[float] = typer.Option(None, "--lambda0", help="Upper end of the lambda window"),
    A: Optional[float] = typer.Option(None, "--A", help="Exponent in 1 - lambda^A"),
    cases: Optional[int] = typer.Option(None, "--cases", help="Number of random fields"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Quantitative three-annulus check over a random suite."""
    _execute("three-annulus", config, p=p, q=q, lambda0=lambda0, A=A, cases=cases, seed=seed,
             output_dir=out)


@app.command()
def glue(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    l: Optional[int] = typer.Option(None, "--l", help="Degree of the Jacobi field u_l"),
    beta: Optional[float] = typer.Option(None, "--beta", help="Gluing exponent"),
    A: Optional[float] = typer.Option(None, "--A", help="Scale parameter; X lives in rho < 1/A"),
    delta: Optional[float] = typer.Option(None, "--delta", help="Outer weight exponent"),
    tau: Optional[float] = typer.Option(None, "--tau", help="Inner weight exponent"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Build the glued surface X and certify its mean curvature."""
    _execute("glue", config, p=p, q=q, l=l, beta=beta, A=A, delta=delta, tau=tau, seed=seed,
             output_dir=out)


@app.command()
def solve(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    l: Optional[int] = typer.Option(None, "--l", help="Degree of the Jacobi field u_l"),
    beta: Optional[float] = typer.Option(None, "--beta", help="Gluing exponent"),
    A: Optional[float] = typer.Option(None, "--A", help="Scale parameter; X lives in rho < 1/A"),
    delta: Optional[float] = typer.Option(None, "--delta", help="Outer weight exponent"),
    tau: Optional[float] = typer.Option(None, "--tau", help="Inner weight exponent"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Newton-correct X to the minimal surface T."""
    _execute("solve", config, p=p, q=q, l=l, beta=beta, A=A, delta=delta, tau=tau, seed=seed,
             output_dir=out)


@app.command()
def barrier(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    eps: Optional[float] = typer.Option(None, "--eps", help="Leaf parameter amplitude"),
    K: Optional[float] = typer.Option(None, "--K", help="Bound on the C^3 norm of f"),
    f: Optional[float] = typer.Option(None, "--f", help="Constant profile f"),
    sampled: Optional[bool] = typer.Option(None, "--sampled/--linearized",
                                           help="Certify the sampled X_eps instead of the linearization"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Build the barrier surface and check its negativity certificate."""
    _execute("barrier", config, p=p, q=q, eps=eps, K=K, f=f, sampled=sampled, seed=seed,
             output_dir=out)


@app.command()
def doubling(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    samples: Optional[str] = typer.Option(None, "--samples", help="u,v,y,weight CSV; default the cone"),
    step: Optional[float] = typer.Option(None, "--step", help="Log step lambda between radii"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Number of steps K"),
    qreg: Optional[float] = typer.Option(None, "--qreg", help="Regularization exponent q"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Doubling sequence d(M, e^-k lambda) of a sampled surface."""
    _execute("doubling", config, p=p, q=q, samples=samples, step=step, steps=steps, qreg=qreg,
             seed=seed, output_dir=out)


@app.command()
def degree(
    p: Optional[int] = P_OPT,
    q: Optional[int] = Q_OPT,
    l: Optional[int] = typer.Option(None, "--l", help="Degree of the synthetic graph u_l"),
    samples: Optional[str] = typer.Option(None, "--samples", help="u,v,y,weight CSV"),
    scales: Optional[List[float]] = typer.Option(None, "--scale", help="Blowup factor (repeatable)"),
    seed: Optional[int] = SEED_OPT,
    out: Optional[str] = OUT_OPT,
    config: Optional[Path] = CONFIG_OPT,
):
    """Degree of a sampled surface from its normalized blowups."""
    _execute("degree", config, p=p, q=q, l=l, samples=samples, scales=list(scales) if scales else None,
             seed=seed, output_dir=out)


if __name__ == "__main__":
    app()
