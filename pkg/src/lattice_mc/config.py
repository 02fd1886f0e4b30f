"""Model configuration: JSON ingestion and the builtin model catalog.

A config is a declarative SDE: coefficient matrices as expression strings
(see expressions.py for the grammar) plus the traits the lattice selector
needs.  Four named builtins pin the models used throughout the test suite
and docs; naming one overrides any coefficient expressions in the same file,
while plainly numeric fields (x0, horizon, label) may still be overridden.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .builder import ConfigurationError, SDEModel
from .expressions import ExpressionError, compile_expression

__all__ = ["ModelConfig", "load_config", "config_to_model", "builtin_config", "builtin_model", "BUILTIN_NAMES"]

_STATE_MAPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {"exp": np.exp}

# Keys a config file may override on top of a builtin; everything else
# (coefficients and traits) is pinned by the builtin definition.
_BUILTIN_OVERRIDABLE = {"x0", "horizon", "label"}

_CONFIG_KEYS = {
    "builtin",
    "dim",
    "drift",
    "diffusion",
    "x0",
    "horizon",
    "sigma_min",
    "epsilon",
    "frame",
    "growth",
    "state_map",
    "label",
}


@dataclass(frozen=True)
class ModelConfig:
    """A validated, still-symbolic model description."""

    dim: int
    drift_exprs: tuple[str, ...]
    diffusion_exprs: tuple[tuple[str, ...], ...]
    x0: tuple[float, ...]
    horizon: float = 1.0
    sigma_min: float | None = None
    epsilon: float | None = None
    frame: tuple[tuple[float, ...], ...] | None = None
    growth: str = "linear_growth"
    state_map: str | None = None
    label: str = "sde"
    builtin: str | None = None

    def __post_init__(self) -> None:
        d = self.dim
        if d < 1:
            raise ConfigurationError(f"dim must be >= 1, got {d}")
        if len(self.drift_exprs) != d:
            raise ConfigurationError(f"drift needs {d} expressions, got {len(self.drift_exprs)}")
        if len(self.diffusion_exprs) != d:
            raise ConfigurationError(f"diffusion needs {d} rows, got {len(self.diffusion_exprs)}")
        widths = {len(row) for row in self.diffusion_exprs}
        if len(widths) != 1 or min(widths) < 1:
            raise ConfigurationError("diffusion rows must share one positive width")
        if len(self.x0) != d:
            raise ConfigurationError(f"x0 needs {d} components, got {len(self.x0)}")
        if not all(math.isfinite(v) for v in self.x0):
            raise ConfigurationError("x0 must be finite")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ConfigurationError(f"horizon must be positive, got {self.horizon!r}")
        if self.growth not in ("bounded", "linear_growth"):
            raise ConfigurationError(f"growth must be bounded or linear_growth, got {self.growth!r}")
        if self.state_map is not None and self.state_map not in _STATE_MAPS:
            raise ConfigurationError(f"unknown state_map {self.state_map!r}; known: {sorted(_STATE_MAPS)}")
        for exprs in (self.drift_exprs, *self.diffusion_exprs):
            for src in exprs:
                try:
                    compile_expression(src, d)
                except ExpressionError as exc:
                    raise ConfigurationError(f"bad coefficient expression {src!r}: {exc}") from exc

    @property
    def brownian_dim(self) -> int:
        return len(self.diffusion_exprs[0])


_BUILTINS: dict[str, ModelConfig] = {
    "bm": ModelConfig(
        dim=1,
        drift_exprs=("0",),
        diffusion_exprs=(("1",),),
        x0=(0.0,),
        sigma_min=1.0,
        growth="bounded",
        label="bm",
        builtin="bm",
    ),
    # log-price coordinates: drift mu - sigma^2/2 with mu=0.05, sigma=0.2,
    # so price functionals go through state_map exp and E[P_1] = e^mu.
    "gbm": ModelConfig(
        dim=1,
        drift_exprs=("0.03",),
        diffusion_exprs=(("0.2",),),
        x0=(0.0,),
        sigma_min=0.2,
        growth="bounded",
        state_map="exp",
        label="gbm",
        builtin="gbm",
    ),
    "toy2d": ModelConfig(
        dim=2,
        drift_exprs=("sin(x1)", "cos(x2)"),
        diffusion_exprs=(("cos(x2)+2", "0"), ("0", "sin(x1)+2")),
        x0=(0.0, 0.0),
        epsilon=1.0,  # diagonal entries of Sigma are (cos+2)^2, (sin+2)^2 >= 1
        growth="bounded",
        label="toy2d",
        builtin="toy2d",
    ),
    # log-price/variance coordinates; Sigma = V * [[1, 0.2], [0.2, 1]], whose
    # smallest eigenvalue 0.8 V crosses the exactness threshold inside the
    # reachable V range -- the model that forces a mix of row modes.
    "heston_mod": ModelConfig(
        dim=2,
        drift_exprs=("-x2/2", "2*(2/(1+exp(x1))+5-x2)"),
        diffusion_exprs=(
            ("sqrt(max(x2,0))", "0"),
            ("0.2*sqrt(max(x2,0))", "sqrt(max(x2,0))*sqrt(0.96)"),
        ),
        x0=(math.log(100.0), 5.0),
        epsilon=4.0,  # 0.8 * V at the start level V0 = 5
        growth="linear_growth",
        label="heston_mod",
        builtin="heston_mod",
    ),
}

BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin_config(name: str) -> ModelConfig:
    try:
        return _BUILTINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown builtin {name!r}; known: {list(BUILTIN_NAMES)}") from None


def load_config(path: str) -> ModelConfig:
    """Read a JSON model config; a "builtin" key loads the catalog entry.

    Unknown keys are rejected (typo safety).  With a builtin, only x0,
    horizon, and label may be overridden; coefficients and traits are pinned.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigurationError(f"{path}: unknown config keys {sorted(unknown)}")

    if "builtin" in raw:
        pinned = set(raw) - _BUILTIN_OVERRIDABLE - {"builtin"}
        if pinned:
            raise ConfigurationError(
                f"{path}: {sorted(pinned)} cannot be overridden on a builtin "
                f"(only {sorted(_BUILTIN_OVERRIDABLE)} may)"
            )
        cfg = builtin_config(raw["builtin"])
        overrides = {}
        for key in _BUILTIN_OVERRIDABLE & set(raw):
            overrides[key] = tuple(raw[key]) if key == "x0" else raw[key]
        return replace(cfg, **overrides) if overrides else cfg

    missing = {"dim", "drift", "diffusion", "x0"} - set(raw)
    if missing:
        raise ConfigurationError(f"{path}: missing required keys {sorted(missing)}")
    try:
        return ModelConfig(
            dim=int(raw["dim"]),
            drift_exprs=tuple(str(e) for e in raw["drift"]),
            diffusion_exprs=tuple(tuple(str(e) for e in row) for row in raw["diffusion"]),
            x0=tuple(float(v) for v in raw["x0"]),
            horizon=float(raw.get("horizon", 1.0)),
            sigma_min=None if raw.get("sigma_min") is None else float(raw["sigma_min"]),
            epsilon=None if raw.get("epsilon") is None else float(raw["epsilon"]),
            frame=None
            if raw.get("frame") is None
            else tuple(tuple(float(v) for v in row) for row in raw["frame"]),
            growth=str(raw.get("growth", "linear_growth")),
            state_map=raw.get("state_map"),
            label=str(raw.get("label", "sde")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"{path}: malformed value: {exc}") from exc


def config_to_model(cfg: ModelConfig) -> SDEModel:
    """Compile the expressions and assemble the evaluable SDEModel."""
    d = cfg.dim
    drift_fns = [compile_expression(src, d) for src in cfg.drift_exprs]
    diff_fns = [[compile_expression(src, d) for src in row] for row in cfg.diffusion_exprs]

    def drift(pts: np.ndarray) -> np.ndarray:
        return np.stack([fn(pts) for fn in drift_fns], axis=-1)

    def diffusion(pts: np.ndarray) -> np.ndarray:
        return np.stack(
            [np.stack([fn(pts) for fn in row], axis=-1) for row in diff_fns], axis=-2
        )

    return SDEModel(
        dim=d,
        drift=drift,
        diffusion=diffusion,
        brownian_dim=cfg.brownian_dim,
        growth=cfg.growth,
        sigma_min=cfg.sigma_min,
        epsilon=cfg.epsilon,
        fixed_frame=None if cfg.frame is None else np.array(cfg.frame, dtype=float),
        horizon=cfg.horizon,
        state_map=None if cfg.state_map is None else _STATE_MAPS[cfg.state_map],
        label=cfg.label,
    )


def builtin_model(name: str) -> SDEModel:
    return config_to_model(builtin_config(name))
