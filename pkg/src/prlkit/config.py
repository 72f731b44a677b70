"""Run configuration: defaults, key=value config files, and resolved snapshots.

Precedence is flags > config file > defaults. Every command writes the
resolved configuration next to its outputs together with a content hash of
the inputs, so a run can be reproduced from its output directory alone.
The parallelism degree is deliberately not part of the snapshot: results
are required to be byte-identical for any worker count.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InputError
from .tuning import DEFAULT_BAND, default_tau_p_grid


@dataclass
class RunConfig:
    tau_p: float = 0.5
    tau_r: float = 0.1
    patch_shape: tuple[int, int, int] = (64, 64, 24)
    dilation_mm: float = 3.0
    connectivity: int = 26
    band: tuple[float, float] = DEFAULT_BAND
    n_folds: int = 5
    seed: int = 0
    jobs: int = 1
    tau_p_grid: tuple[float, ...] | None = None

    def effective_tau_p_grid(self) -> tuple[float, ...]:
        return self.tau_p_grid if self.tau_p_grid is not None else default_tau_p_grid()

    def validate(self) -> "RunConfig":
        if not (0.0 <= self.tau_p <= 1.0):
            raise InputError(f"tau_p must be in [0,1], got {self.tau_p}")
        if self.tau_r < 0:
            raise InputError(f"tau_r must be non-negative, got {self.tau_r}")
        if len(self.patch_shape) != 3 or min(self.patch_shape) < 1:
            raise InputError(f"bad patch_shape {self.patch_shape}")
        if self.dilation_mm <= 0:
            raise InputError(f"dilation_mm must be positive, got {self.dilation_mm}")
        if self.connectivity not in (6, 18, 26):
            raise InputError(f"connectivity must be 6/18/26, got {self.connectivity}")
        lo, hi = self.band
        if not (0.0 <= lo <= hi <= 1.0):
            raise InputError(f"bad sensitivity band {self.band}")
        if self.n_folds < 2:
            raise InputError(f"n_folds must be at least 2, got {self.n_folds}")
        if self.jobs < 1:
            raise InputError(f"jobs must be at least 1, got {self.jobs}")
        return self


_INT_KEYS = {"connectivity", "n_folds", "seed", "jobs"}
_FLOAT_KEYS = {"tau_p", "tau_r", "dilation_mm"}
_TUPLE_KEYS = {"patch_shape": int, "band": float, "tau_p_grid": float}


def parse_config_file(path: str | Path) -> dict:
    """Parse a simple `key = value` text file; '#' starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such config file: {path}")
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key] = value
    return {key: _coerce(key, value, path) for key, value in raw.items()}


def _coerce(key: str, value: str, origin):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _TUPLE_KEYS:
            cast = _TUPLE_KEYS[key]
            return tuple(cast(part.strip()) for part in value.split(",") if part.strip())
    except ValueError as exc:
        raise InputError(f"{origin}: bad value for {key}: {value!r}") from exc
    return value


def resolve_config(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Merge defaults, config-file values, and flag overrides (highest wins)."""
    known = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    for source in (file_values or {}, flag_values or {}):
        for key, value in source.items():
            if key not in known:
                raise InputError(f"unknown configuration key {key!r}")
            if value is not None:
                merged[key] = value
    config = RunConfig(**merged)
    return config.validate()


def sha256_of(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_snapshot(out_dir: str | Path, command: str, config: RunConfig, inputs: dict[str, str | Path]) -> Path:
    """Write resolved_config.json: the single source of truth for reproduction."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "command": command,
        "config": {
            "tau_p": config.tau_p,
            "tau_r": config.tau_r,
            "patch_shape": list(config.patch_shape),
            "dilation_mm": config.dilation_mm,
            "connectivity": config.connectivity,
            "band": list(config.band),
            "n_folds": config.n_folds,
            "seed": config.seed,
            "tau_p_grid": list(config.tau_p_grid) if config.tau_p_grid is not None else None,
        },
        "inputs": {
            name: {"path": str(p), "sha256": sha256_of(p)} for name, p in sorted(inputs.items())
        },
    }
    path = out_dir / "resolved_config.json"
    path.write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    return path
