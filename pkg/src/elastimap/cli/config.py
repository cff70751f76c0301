"""Run configuration: YAML parsing with a strict, documented schema.

Unknown keys are rejected and every validation error names the offending
field, so a typo cannot silently fall back to a default. The full schema
with defaults is documented in ``configs/SCHEMA.md``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from ..errors import ElastimapError
from ..explorer import ExplorerParams
from ..gprf import BETA_FIELD_DEFAULTS, GEOMETRY_DEFAULTS, TOUCH_DEFAULTS, Hyperparams
from ..msm import MODES, SolverParams
from ..world import (
    BadLayout,
    HARDNESS_TO_BETA,
    ProbeModel,
    RegionSpec,
    Scenario,
    ScenarioConfig,
    SensorModel,
    build_scenario,
)


class ConfigError(ElastimapError):
    """A configuration file failed validation; the message names the field."""


@dataclass(frozen=True)
class StudyConfig:
    """Options for the recovery and cluster-size study subcommands."""

    betas: tuple[float, ...] | None = None      # default: distinct region values
    trials: int = 3
    noise_std: float = 0.0005
    cluster_sizes: tuple[int, ...] = (3, 5, 7, 9)
    truth_cluster_size: int = 3
    beta_true: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs, resolved and validated."""

    scenario: Scenario
    solver: SolverParams
    explorer: ExplorerParams
    study: StudyConfig

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, explorer=replace(self.explorer, seed=int(seed)))


def _expect_mapping(node, path: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(node).__name__}")
    return node


def _take(section: dict, path: str, known: dict) -> dict:
    """Pop known keys with type coercion; reject anything left over."""
    out = {}
    for key, (kind, default) in known.items():
        if key in section:
            out[key] = _coerce(section.pop(key), kind, f"{path}.{key}")
        else:
            out[key] = default
    if section:
        raise ConfigError(f"{path}.{next(iter(section))}: unknown key")
    return out


def _coerce(value, kind, path: str):
    try:
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return int(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind == "pair":
            pair = list(value)
            if len(pair) != 2:
                raise TypeError
            return (float(pair[0]), float(pair[1]))
        if kind == "floats":
            return tuple(float(v) for v in value)
        if kind == "ints":
            return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {kind if isinstance(kind, str) else kind.__name__}, got {value!r}") from None
    raise AssertionError(f"unhandled kind {kind}")


def _positive(value: float, path: str) -> float:
    if not value > 0:
        raise ConfigError(f"{path}: must be positive, got {value}")
    return value


def _hyper(section: dict, path: str, defaults: Hyperparams) -> Hyperparams:
    vals = _take(
        _expect_mapping(section, path),
        path,
        {
            "sigma_e": (float, defaults.sigma_e),
            "sigma_w": (float, defaults.sigma_w),
            "sigma_n": (float, defaults.sigma_n),
        },
    )
    try:
        return Hyperparams(**vals)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: str) -> RunConfig:
    """Load and validate a YAML run configuration."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(_expect_mapping(raw, "config"))


def parse_config(raw: dict) -> RunConfig:
    raw = dict(raw)
    scenario_id = _coerce(raw.pop("scenario_id", "scenario"), str, "scenario_id")

    ws = _take(
        _expect_mapping(raw.pop("workspace", None), "workspace"),
        "workspace",
        {"width": (float, 0.60), "height": (float, 0.40)},
    )
    _positive(ws["width"], "workspace.width")
    _positive(ws["height"], "workspace.height")
    base_height = _coerce(raw.pop("base_height", 0.05), float, "base_height")

    hardness_map = dict(HARDNESS_TO_BETA)
    if "hardness_map" in raw:
        user_map = _expect_mapping(raw.pop("hardness_map"), "hardness_map")
        for label, beta in user_map.items():
            hardness_map[str(label)] = _coerce(beta, float, f"hardness_map.{label}")

    regions_raw = raw.pop("regions", None)
    if regions_raw is None:
        regions = (RegionSpec(rect=(0.0, 0.0, ws["width"], ws["height"]), hardness="60"),)
    else:
        if not isinstance(regions_raw, list) or not regions_raw:
            raise ConfigError("regions: expected a non-empty list")
        regions = tuple(_region(entry, f"regions[{i}]") for i, entry in enumerate(regions_raw))

    sensor_vals = _take(
        _expect_mapping(raw.pop("sensor", None), "sensor"),
        "sensor",
        {
            "spacing": (float, 0.007),
            "noise_std": (float, 0.002),
            "outlier_fraction": (float, 0.01),
            "outlier_amplitude": (float, 0.10),
            "occlusion_radius": (float, 0.03),
        },
    )
    probe_vals = _take(
        _expect_mapping(raw.pop("probe", None), "probe"),
        "probe",
        {
            "tip_radius": (float, 0.01),
            "press_depth": (float, 0.015),
            "tactile_points": (int, 10),
        },
    )
    solver_vals = _take(
        _expect_mapping(raw.pop("solver", None), "solver"),
        "solver",
        {
            "step": (float, 0.8),
            "eps": (float, 1e-6),
            "max_iters": (int, 2000),
            "mode": (str, "quadratic"),
            "cluster_size": (int, 3),
            "cluster_stride": (int, 1),
        },
    )
    if solver_vals["mode"] not in MODES:
        raise ConfigError(f"solver.mode: must be one of {MODES}, got {solver_vals['mode']!r}")

    est_vals = _take(
        _expect_mapping(raw.pop("estimator", None), "estimator"),
        "estimator",
        {"beta_step": (float, 0.05), "warm_start": (bool, True)},
    )
    if not 0 < est_vals["beta_step"] < 1:
        raise ConfigError(f"estimator.beta_step: must lie in (0, 1), got {est_vals['beta_step']}")

    exp_vals = _take(
        _expect_mapping(raw.pop("explorer", None), "explorer"),
        "explorer",
        {
            "variance_threshold": (float, 0.06),
            "grid_spacing": (float, 0.005),
            "roi_half_width": (float, 0.06),
            "max_interactions": (int, 12),
            "seed": (int, 0),
            "selection": (str, "random"),
            "initial_target": ("pair", None),
            "displacement_threshold": (float, 0.001),
            "train_spacing": (float, 0.02),
            "sim_spacing": (float, 0.01),
            "max_world_points": (int, 2500),
            "filter_k": (int, 8),
            "filter_std_ratio": (float, 1.0),
        },
    )

    gpr_raw = _expect_mapping(raw.pop("gpr", None), "gpr")
    world_hyper = _hyper(gpr_raw.pop("world", None), "gpr.world", GEOMETRY_DEFAULTS)
    touch_hyper = _hyper(gpr_raw.pop("touch", None), "gpr.touch", TOUCH_DEFAULTS)
    beta_hyper = _hyper(gpr_raw.pop("beta", None), "gpr.beta", BETA_FIELD_DEFAULTS)
    if gpr_raw:
        raise ConfigError(f"gpr.{next(iter(gpr_raw))}: unknown key")

    study_vals = _take(
        _expect_mapping(raw.pop("study", None), "study"),
        "study",
        {
            "betas": ("floats", None),
            "trials": (int, 3),
            "noise_std": (float, 0.0005),
            "cluster_sizes": ("ints", (3, 5, 7, 9)),
            "truth_cluster_size": (int, 3),
            "beta_true": (float, 0.5),
            "seed": (int, 0),
        },
    )
    if raw:
        raise ConfigError(f"{next(iter(raw))}: unknown key")

    try:
        sensor = SensorModel(**sensor_vals)
        probe = ProbeModel(
            tip_radius=probe_vals["tip_radius"],
            press_depth=probe_vals["press_depth"],
            tactile_count=probe_vals["tactile_points"],
        )
        solver = SolverParams(**solver_vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    try:
        scenario = build_scenario(
            ScenarioConfig(
                workspace=(ws["width"], ws["height"]),
                base_height=base_height,
                regions=regions,
                sensor=sensor,
                probe=probe,
                hardness_map=hardness_map,
                scenario_id=scenario_id,
            )
        )
    except BadLayout as exc:
        raise ConfigError(str(exc)) from None

    step = est_vals["beta_step"]
    beta_grid = tuple(np.round(np.arange(0.0, 1.0 - 1e-12, step), 10))
    try:
        explorer = ExplorerParams(
            **exp_vals,
            world_hyper=world_hyper,
            touch_hyper=touch_hyper,
            beta_hyper=beta_hyper,
            solver=solver,
            beta_grid=beta_grid,
            warm_start=est_vals["warm_start"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    study = StudyConfig(**study_vals)
    return RunConfig(scenario=scenario, solver=solver, explorer=explorer, study=study)
