"""Experiment configuration: YAML (or JSON) file, schema check, defaults, domain objects."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .analysis import ChshSettings
from .franson import InterferometerConfig
from .physics import DEFAULT_DETUNING, DEFAULT_LIFETIME, EmitterParams
from .trajectories import Bunching, DutyCycle, TrajectoryConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "emitter": {"lifetime_s": DEFAULT_LIFETIME, "detuning_rad_per_s": DEFAULT_DETUNING, "s0": 0.1},
    "trajectory": {
        "duration_s": 1.0,
        "seed": 0,
        "efficiency": 1.0,
        "detuning_jitter_rad_per_s": 0.0,
        "run_count": 1,
        "background_rate_per_s": 0.0,
        "bunching": None,
        "duty_cycle": None,
    },
    "interferometer": {
        "delay_a_s": 46.1e-9,
        "delay_b_s": 46.7e-9,
        "phase_a_rad": 0.0,
        "phase_b_rad": 0.0,
        "splitter_ratio": 0.5,
    },
    "analysis": {
        "bin_width_s": 1e-9,
        "span_s": 200e-9,
        "g2_points": 801,
        "window_s": 10e-9,
        "windows_s": [0.5e-9 * k for k in range(1, 201)],
        "chsh_settings_rad": [0.0, math.pi / 2, math.pi / 4, 3 * math.pi / 4],
        "window_rescale": "auto",
        "psi_model": "exact",
        "visibility_delay_s": 46e-9,
        "visibility_s0_grid": [round(0.05 * k, 2) for k in range(1, 101)],
        "pair_rate_s0_grid": [round(0.1 * k, 1) for k in range(1, 201)],
    },
    "tomography": {
        "records_path": None,
        "synthesize": False,
        "sigma_zz": None,
        "sigma_zz_window_s": 10e-9,
        "sigma_zz_delay_s": 46e-9,
        "n_zz": None,
        "pseudo_mode": "likelihood",
        "n_starts": 8,
        "bootstrap_samples": 100,
    },
}


def schema(name: str) -> dict:
    return json.loads(resources.files("fluoro").joinpath(f"schemas/{name}.schema.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | Path | None) -> dict:
    """Read, validate and merge a configuration file over the defaults.

    Raises ConfigError for schema problems and OSError for unreadable files.
    """
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
    try:
        jsonschema.validate(raw, schema("config"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc
    em = raw.get("emitter", {})
    cfg = _merge(DEFAULTS, raw)
    # explicit choices in the file override the default's alternative keys
    if "gamma_rad_per_s" in em:
        cfg["emitter"].pop("lifetime_s", None)
    if "rabi_rad_per_s" in em:
        cfg["emitter"].pop("s0", None)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def emitter_from(cfg: dict, s0: float | None = None) -> EmitterParams:
    em = cfg["emitter"]
    gamma = em["gamma_rad_per_s"] if "gamma_rad_per_s" in em else 1.0 / (2.0 * em["lifetime_s"])
    delta = em.get("detuning_rad_per_s", 0.0)
    if s0 is not None:
        return EmitterParams.from_s0(s0, gamma, delta)
    if "rabi_rad_per_s" in em:
        return EmitterParams(gamma, delta, em["rabi_rad_per_s"])
    return EmitterParams.from_s0(em["s0"], gamma, delta)


def trajectory_from(cfg: dict, seed: int | None = None, emitter: EmitterParams | None = None) -> TrajectoryConfig:
    tr = cfg["trajectory"]
    b = tr.get("bunching")
    d = tr.get("duty_cycle")
    try:
        return TrajectoryConfig(
            emitter=emitter or emitter_from(cfg),
            duration=tr["duration_s"],
            seed=tr["seed"] if seed is None else seed,
            efficiency=tr["efficiency"],
            detuning_jitter_sigma=tr["detuning_jitter_rad_per_s"],
            bunching=Bunching(b["amplitude"], b["timescale_s"]) if b else None,
            duty_cycle=DutyCycle(d["drive_s"], d["dead_s"]) if d else None,
            run_count=tr["run_count"],
            background_rate=tr["background_rate_per_s"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def interferometer_from(cfg: dict) -> InterferometerConfig:
    it = cfg["interferometer"]
    return InterferometerConfig(it["delay_a_s"], it["delay_b_s"], it["phase_a_rad"], it["phase_b_rad"],
                                it["splitter_ratio"])


def chsh_settings_from(cfg: dict) -> ChshSettings:
    return ChshSettings(*cfg["analysis"]["chsh_settings_rad"])


def rescale_flag(cfg: dict) -> bool | None:
    return {"auto": None, "on": True, "off": False}[cfg["analysis"]["window_rescale"]]
