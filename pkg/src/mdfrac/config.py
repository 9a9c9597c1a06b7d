"""Schema-validated run configuration."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .mesh import MixedDimMesh, load_mesh
from .presets import base_mesh, default_parameters, default_pressure_data
from .scaling import FeatureParams, ParameterError, ParameterTable, compile_expression

CHECKS = ("none", "conservation", "rates", "infsup", "all")


class ConfigError(ValueError):
    """Invalid configuration (schema violation or unusable value)."""


def load_schema() -> dict:
    return json.loads(resources.files("mdfrac").joinpath("config.schema.json").read_text())


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; built from JSON or command-line flags."""

    preset: str | None = None
    mesh: str | None = None
    parameters: dict = field(default_factory=dict)
    pressure: float | str | None = None
    source: dict = field(default_factory=dict)
    levels: int = 1
    reference_extra: int = 1
    rho: float = 0.02
    tol: float = 1e-10
    out: str = "out"
    seed: int = 0
    check: str = "none"
    options: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.preset or Path(self.mesh).stem

    @property
    def allow_clipping(self) -> bool:
        return bool(self.options.get("nonmatching_3d_mortars", False))

    @property
    def infsup(self) -> bool:
        return bool(self.options.get("infsup_probe", False)) or self.check in ("infsup", "all")

    def base_mesh(self) -> MixedDimMesh:
        if self.preset:
            return base_mesh(self.preset, self.seed)
        try:
            return load_mesh(self.mesh)
        except (OSError, ValueError, KeyError) as err:
            raise ConfigError(f"cannot load mesh '{self.mesh}': {err}") from err

    def parameter_table(self) -> ParameterTable:
        base = default_parameters(self.preset) if self.preset else ParameterTable()
        overrides = self.parameters
        default = base.default
        if "default" in overrides:
            default = _params({**vars(base.default), **_strip(overrides["default"])})
        feats = dict(base.features)
        for item in overrides.get("features", []):
            key = (item["dim"], item["id"])
            old = vars(feats.get(key, default))
            feats[key] = _params({**old, **_strip(item)})
        return ParameterTable(feats, default, overrides.get("eps_exponent", base.eps_exponent))

    def pressure_data(self) -> float | str:
        if self.pressure is not None:
            return self.pressure
        return default_pressure_data(self.preset) if self.preset else 0.0

    def source_data(self) -> dict[int, float | str] | None:
        return {int(k): v for k, v in self.source.items()} or None

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return validate_config({**self.to_dict(), **kw})

    def to_dict(self) -> dict:
        out = {}
        for k, v in vars(self).items():
            if v is None or (isinstance(v, dict) and not v):
                continue
            out[k] = v
        return out


def _strip(d: dict) -> dict:
    return {k: (tuple(map(tuple, v)) if k == "K" and isinstance(v, list) else v)
            for k, v in d.items() if k not in ("dim", "id")}


def _params(d: dict) -> FeatureParams:
    g = d.get("gamma", 0.0)
    if isinstance(g, str):
        try:
            compile_expression(g)
        except ParameterError as err:
            raise ConfigError(f"gamma expression '{g}': {err}") from err
    return FeatureParams(**d)


def validate_config(data: dict[str, Any]) -> RunConfig:
    """Validate against the published schema and build a :class:`RunConfig`."""
    try:
        jsonschema.validate(data, load_schema())
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}") from err
    for key in ("pressure",):
        if isinstance(data.get(key), str):
            _expression(data[key], key)
    for dim, v in data.get("source", {}).items():
        if isinstance(v, str):
            _expression(v, f"source[{dim}]")
    cfg = RunConfig(**data)
    cfg.parameter_table()
    return cfg


def _expression(text: str, what: str) -> None:
    try:
        compile_expression(text)
    except ParameterError as err:
        raise ConfigError(f"{what}: {err}") from err


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config '{path}': {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config '{path}' is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return validate_config(data)


__all__ = ["CHECKS", "ConfigError", "RunConfig", "load_config", "load_schema", "validate_config"]
