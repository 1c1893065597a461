"""Scenario configuration files (JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .medium import BoxDomain, ComplexGridField, MediumSpec, field_from_spec, p_from_target


@dataclass
class ScenarioConfig:
    medium: MediumSpec
    p: ComplexGridField
    target_n: ComplexGridField | None = None
    schedule_M: list = field(default_factory=list)
    schedule_a: list = field(default_factory=list)
    recipe: str = "auto"
    seed: int = 0
    probes: np.ndarray | None = None
    directions: np.ndarray | None = None
    output_dir: Path = Path("out")
    mode: str = "free-kernel"
    continuum_grid: tuple | None = None
    recipe_file: Path | None = None
    source: Path | None = None

    @property
    def domain(self) -> BoxDomain:
        return self.medium.domain

    def continuum_medium(self) -> MediumSpec:
        if self.continuum_grid is None or tuple(self.continuum_grid) == self.domain.grid_shape:
            return self.medium
        return self.medium.with_grid(self.continuum_grid)

    def probe_points(self) -> np.ndarray:
        """Default: 26 cube directions on a sphere of radius 3 diam(D) around D."""
        if self.probes is not None:
            return self.probes
        from .continuum import default_directions

        return self.domain.center + 3.0 * self.domain.diameter * default_directions()

    def far_directions(self) -> np.ndarray:
        from .continuum import default_directions

        return default_directions() if self.directions is None else self.directions


def _vec3(value, name) -> tuple:
    try:
        v = tuple(float(x) for x in value)
    except TypeError as exc:
        raise ConfigError(f"{name} must be a list of 3 numbers") from exc
    if len(v) != 3:
        raise ConfigError(f"{name} must have 3 components")
    return v


def _directions(value, name):
    if value is None:
        return None
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.shape[1] != 3:
        raise ConfigError(f"{name} must be a list of 3-vectors")
    return arr / np.linalg.norm(arr, axis=1, keepdims=True) if name == "directions" else arr


def parse_config(data: dict, base: Path | None = None) -> ScenarioConfig:
    try:
        d = data["domain"]
        domain = BoxDomain(_vec3(d["lo"], "domain.lo"), _vec3(d["hi"], "domain.hi"),
                           tuple(int(n) for n in d["grid_shape"]))
        k = float(data["k"])
        alpha = np.asarray(_vec3(data.get("alpha", (0.0, 0.0, 1.0)), "alpha"))
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from exc
    alpha = alpha / np.linalg.norm(alpha)
    n0 = field_from_spec(data.get("n0", "vacuum"), domain, "n0")
    medium = MediumSpec(domain, k, tuple(alpha), n0)

    target_n = None
    if "target_n" in data and "p" in data:
        raise ConfigError("give either target_n or p, not both")
    if "target_n" in data:
        target_n = field_from_spec(data["target_n"], domain, "target_n")
        p = p_from_target(n0, target_n, k)
    elif "p" in data:
        p = field_from_spec(data["p"], domain, "p")
    else:
        raise ConfigError("config needs target_n or p")

    sched = data.get("schedule", {})
    Ms = [int(m) for m in sched.get("M", [])]
    As = [float(a) for a in sched.get("a", [])]
    if Ms and As:
        raise ConfigError("schedule takes either M or a values, not both")
    if Ms and any(b <= a for a, b in zip(Ms, Ms[1:])):
        raise ConfigError("schedule M values must be strictly increasing")
    if As and any(b >= a for a, b in zip(As, As[1:])):
        raise ConfigError("schedule a values must be strictly decreasing (increasing M)")
    if Ms and min(Ms) <= 0:
        raise ConfigError("schedule M values must be positive")

    mode = data.get("mode", "free-kernel")
    if mode not in ("free-kernel", "background-green"):
        raise ConfigError(f"mode must be free-kernel or background-green, got {mode!r}")
    recipe = data.get("recipe", "auto")
    if recipe not in ("auto", "soft", "general"):
        raise ConfigError(f"recipe must be auto, soft or general, got {recipe!r}")

    base = base or Path(".")
    out = Path(data.get("output_dir", "out"))
    rf = data.get("recipe_file")
    cg = data.get("continuum_grid")
    return ScenarioConfig(
        medium=medium,
        p=p,
        target_n=target_n,
        schedule_M=Ms,
        schedule_a=As,
        recipe=recipe,
        seed=int(data.get("seed", 0)),
        probes=_directions(data.get("probes"), "probes"),
        directions=_directions(data.get("directions"), "directions"),
        output_dir=out,
        mode=mode,
        continuum_grid=tuple(int(n) for n in cg) if cg else None,
        recipe_file=(Path(rf) if Path(rf).is_absolute() else base / rf) if rf else None,
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = parse_config(data, base=path.parent)
    cfg.source = path
    return cfg
