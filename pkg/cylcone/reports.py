"""CSV and JSON report files."""
import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np
from rich.console import Console

from . import __version__
from .config import FLOAT_FORMAT
from .cone_spectra import QuadraticCone
from .continuation_lab import SampledVarifold

console = Console()


def format_value(value: Any) -> str:
    """Fixed formatting so identical runs give identical bytes."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return str(value)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        # JSON has no inf/nan
        return value if math.isfinite(value) else str(value)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    console.print(f"  [green]✓[/green] Wrote {path.name}")
    return path


def write_json(path: Path, payload: Dict[str, Any],
               config: Optional[Dict[str, Any]] = None) -> Path:
    """Write a report; the resolved config and the version are embedded."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"version": __version__}
    if config is not None:
        body["config"] = config
    body.update(payload)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(body), f, indent=2, sort_keys=True)
        f.write("\n")
    console.print(f"  [green]✓[/green] Wrote {path.name}")
    return path


def write_error(output_dir: Path, command: str, error: BaseException) -> Path:
    """error.json with the class name, message and command."""
    path = Path(output_dir) / "error.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"error": type(error).__name__, "message": str(error), "command": command}, f,
                  indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_varifold(output_dir: Path, name: str, M: SampledVarifold,
                   config: Optional[Dict[str, Any]] = None) -> Path:
    """u,v,y,weight CSV plus a JSON sidecar."""
    path = write_csv(Path(output_dir) / f"{name}.csv", ("u", "v", "y", "weight"), M.to_rows())
    write_json(Path(output_dir) / f"{name}.json",
               {"p": M.cone.p, "q": M.cone.q, "source": M.source, "rho_max": M.rho_max,
                "samples": len(M)}, config)
    return path


def read_varifold(path: Path, cone: QuadraticCone) -> SampledVarifold:
    """
    Load samples written by write_varifold.

    The sidecar is optional; without it the samples are tagged "perturbed"
    and rho_max is taken from the data.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sample file not found: {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 4:
        raise ValueError(f"{path.name}: expected columns u,v,y,weight, got {data.shape[1]}")
    sidecar = path.with_suffix(".json")
    meta = {}
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as f:
            meta = json.load(f)
        if (meta.get("p"), meta.get("q")) not in ((None, None), (cone.p, cone.q)):
            raise ValueError(f"{path.name} was sampled for (p, q) = ({meta['p']}, {meta['q']})")
    rho_max = float(meta.get("rho_max", np.max(np.linalg.norm(data[:, :3], axis=1))))
    return SampledVarifold(cone=cone, points=data[:, :3], weights=data[:, 3],
                           source=meta.get("source", "perturbed"), rho_max=rho_max)
