"""File schemas and serialization helpers for the command-line interface.

Measures are JSON objects {"labels": [...], "weights": [...]} with optional
"coords" (per-atom coordinate or coordinate list) and "tail" ({"kind":
"geometric", "q": 0.7} etc.).  Cost files hold a family spec as consumed by
costs.build_cost.  Floats are emitted with 17 significant digits so every
value round-trips exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .costs import build_cost
from .errors import ConfigParse
from .measures import (
    FINITE_TAIL,
    DiscreteMeasure,
    IndexedSpace,
    TailFamily,
    validate_measure,
)


def _render(obj):
    """Recursively convert to JSON-serializable types with 17-digit floats."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.17g}")
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_render(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _render(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_render(v) for v in obj]
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_render(obj), indent=2) + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParse(f"cannot read JSON file {path}: {exc}") from exc


def sha256_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse_tail(spec) -> TailFamily:
    if spec is None:
        return FINITE_TAIL
    kind = spec.get("kind")
    if kind == "geometric":
        return TailFamily(kind="geometric", q=float(spec["q"]))
    if kind == "polynomial":
        return TailFamily(kind="polynomial", a=float(spec["a"]))
    if kind == "subweibull":
        return TailFamily(kind="subweibull", gamma=float(spec["gamma"]),
                          theta=float(spec["theta"]))
    if kind == "finite":
        return FINITE_TAIL
    raise ConfigParse(f"unknown tail family {kind!r}")


def load_measure(path) -> DiscreteMeasure:
    raw = load_json(path)
    try:
        labels = tuple(raw["labels"])
        weights = np.asarray(raw["weights"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParse(f"measure file {path} needs 'labels' and 'weights'") from exc
    coords = raw.get("coords")
    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
    elif all(isinstance(l, (int, float)) for l in labels):
        coords = np.asarray(labels, dtype=float)[:, None]
    space = IndexedSpace(labels=labels, coords=coords)
    return validate_measure(weights, space, tail=_parse_tail(raw.get("tail")))


def load_cost(path, space_X: IndexedSpace, space_Y: IndexedSpace, lam: float):
    spec = load_json(path)
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigParse(f"cost file {path} must hold a family spec with 'family'")
    return build_cost(spec, space_X, space_Y, lam)


def load_function_tables(path, shape) -> list:
    """Test tables for plan functionals: a JSON list of 2-D arrays, or a CSV
    of dense tables separated by blank lines."""
    p = Path(path)
    tables = []
    if p.suffix == ".json":
        raw = load_json(p)
        if isinstance(raw, dict):
            raw = raw.get("functions", [])
        tables = [np.asarray(t, dtype=float) for t in raw]
    else:
        block = []
        for line in p.read_text().splitlines() + [""]:
            line = line.strip()
            if line:
                block.append([float(v) for v in line.replace(",", " ").split()])
            elif block:
                tables.append(np.asarray(block, dtype=float))
                block = []
    for t in tables:
        if t.shape != tuple(shape):
            raise ConfigParse(
                f"function table shape {t.shape} does not match plan shape {tuple(shape)}"
            )
    if not tables:
        raise ConfigParse(f"no function tables found in {path}")
    return tables


def write_draws_csv(draws: np.ndarray, path) -> None:
    lines = ["replication,draw"]
    lines += [f"{i},{d:.17g}" for i, d in enumerate(np.asarray(draws, dtype=float))]
    Path(path).write_text("\n".join(lines) + "\n")


def write_qq_csv(draws: np.ndarray, sigma2: float, path) -> None:
    """Quantile pairs of the draws against N(0, sigma2)."""
    from scipy import stats

    draws = np.sort(np.asarray(draws, dtype=float))
    n = draws.size
    probs = (np.arange(1, n + 1) - 0.5) / n
    theo = stats.norm.ppf(probs, scale=np.sqrt(sigma2)) if sigma2 > 0 else np.zeros(n)
    lines = ["theoretical,empirical"]
    lines += [f"{t:.17g},{e:.17g}" for t, e in zip(theo, draws)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(path, subcommand: str, config: dict, inputs: list,
                   artifacts: list, seed, seed_used: bool,
                   runtime: float | None = None) -> None:
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "config": config,
        "input_digests": {str(p): sha256_digest(p) for p in inputs},
        "seed": seed,
        "seed_used": seed_used,
        "artifacts": [str(a) for a in artifacts],
    }
    if runtime is not None:
        manifest["runtime"] = runtime
    dump_json(manifest, path)
