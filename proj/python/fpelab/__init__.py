"""Python access to the fpelab C++ core.

Configs are plain dicts (or paths to JSON files); results come back as dicts and numpy arrays.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np

from . import _core
from ._core import (
    ConfigError,
    Error,
    NumericalError,
    basis_size,
    calibration_threshold,
    fernique_bound,
    ns_trilinear,
)

__all__ = [
    "ConfigError",
    "Error",
    "NumericalError",
    "basis_size",
    "calibration_threshold",
    "config_issues",
    "fernique_bound",
    "load_config",
    "ns_drift",
    "ns_trilinear",
    "r0_identity_residual",
    "resolve_lambda",
    "run_experiment",
    "run_pipeline",
    "sample_ou",
    "sha256_hex",
    "spectrum",
    "validate_config",
    "verify_manifest",
]

__version__ = _core.version()

ConfigLike = Union[Mapping[str, Any], str, os.PathLike]


def _text(config: ConfigLike) -> tuple[str, str]:
    """JSON text and base directory of a dict or a config/manifest file."""
    if isinstance(config, Mapping):
        return json.dumps(config), ""
    path = Path(config)
    return path.read_text(), str(path.parent)


def load_config(path: Union[str, os.PathLike]) -> dict:
    return json.loads(Path(path).read_text())


def config_issues(config: ConfigLike) -> list[str]:
    text, base = _text(config)
    return _core.config_issues(text, base)


def validate_config(config: ConfigLike) -> dict:
    """Fully resolved config; raises ConfigError listing every problem."""
    text, base = _text(config)
    return json.loads(_core.validate_config(text, base))


def resolve_lambda(config: ConfigLike, threads: int = 0) -> dict:
    return json.loads(_core.resolve_lambda(validate_config_text(config), threads))


def validate_config_text(config: ConfigLike) -> str:
    return json.dumps(validate_config(config))


def spectrum(config: ConfigLike, lambda_: float) -> dict:
    return json.loads(_core.spectrum(validate_config_text(config), lambda_))


def run_pipeline(config: ConfigLike, threads: int = 0) -> dict:
    """Summary, residual reports and failed checks, without writing files."""
    return json.loads(_core.run_pipeline(validate_config_text(config), threads))


def run_experiment(config: ConfigLike, out: Union[str, os.PathLike, None] = None, threads: int = 0) -> dict:
    """Runs the pipeline, writes artifacts and returns the manifest."""
    resolved = validate_config(config)
    if out is not None:
        resolved["output"] = str(out)
    return json.loads(_core.run_experiment(json.dumps(resolved), "", threads))


def verify_manifest(manifest: Mapping[str, Any], directory: Union[str, os.PathLike]) -> list[str]:
    return _core.verify_manifest(json.dumps(manifest), str(directory))


def sample_ou(config: ConfigLike, lambda_: float, threads: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Exact OU paths: grid of shape (J+1,) and values of shape (M, J+1, n_z)."""
    return _core.sample_ou(validate_config_text(config), lambda_, threads)


def r0_identity_residual(config: ConfigLike, lambda_: float, stride: int = 1, threads: int = 0) -> dict:
    return _core.r0_identity_residual(validate_config_text(config), lambda_, stride, threads)


def ns_drift(d: int, kmax: float, x, nu: float = 1.0) -> np.ndarray:
    return _core.ns_drift(d, kmax, np.asarray(x, dtype=float), nu)


def sha256_hex(data: bytes) -> str:
    return _core.sha256_hex(data)
