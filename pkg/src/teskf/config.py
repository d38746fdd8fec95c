"""Flat JSON run configuration with validation."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .filters import KINDS, LANDMARK_INITS, VARIANTS, FilterOptions
from .model import CAMERA_MOUNTS, CameraModel, NoiseParams
from .simulator import SHAPES, SimWorld, TrajectorySpec, make_world


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # trajectory
    shape: str = "circle"
    radius: float = 4.0
    period: float = 10.0
    yaw_mode: str = "tangent"
    duration: float = 60.0
    altitude: float = 1.5
    altitude_amp: float = 0.3
    pitch_amp: float = 0.1
    speed_amp: float = 0.0
    # landmark field
    n_landmarks: int = 300
    landmark_offset: float = 4.0
    landmark_thickness: float = 1.0
    landmark_half_height: float = 2.5
    # sensors
    imu_hz: float = 400.0
    cam_hz: float = 10.0
    max_points: int = 100
    sigma_g: float = 1.70e-4
    sigma_a: float = 2.00e-3
    sigma_gw: float = 2.00e-5
    sigma_aw: float = 3.00e-3
    sigma_pix: float = 2.0
    gravity: float = 9.81
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    camera_mount: str = "right"
    height: int = 480
    # initial uncertainty (also the spread of the sampled initial error)
    init_sigma_theta_deg: float = 1.0
    init_sigma_p: float = 0.05
    init_sigma_v: float = 0.05
    init_sigma_bg: float = 1e-4
    init_sigma_ba: float = 2e-2
    # filters
    filters: list = field(default_factory=lambda: list(KINDS))
    variant: str = "prior-T"
    gate: float = 5.991464547107979
    max_landmarks: int = 40
    landmark_init: str = "anchored"
    landmark_prior_var: float = 25.0
    depth_inflation: float = 4.0
    init_min_obs: int = 5
    min_baseline: float = 0.05
    # experiment
    n_runs: int = 1
    seed: int = 0
    jobs: int = 1
    nees_window: float = 30.0
    nees_bins: int = 40
    nees_hist_max: float = 10.0
    write_updates: bool = False
    # benchmark
    bench_landmarks: list = field(default_factory=lambda: [0, 20, 50, 100])
    bench_trials: int = 50
    bench_interval: float = 0.1
    # observability audit
    obs_ticks: int = 20
    obs_landmarks: int = 12

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(self.shape in SHAPES, "shape", f"must be one of {SHAPES}")
        need(self.yaw_mode in ("fixed", "tangent"), "yaw_mode", "must be 'fixed' or 'tangent'")
        for key in ("radius", "period", "duration", "imu_hz", "cam_hz", "fx", "fy", "gravity",
                    "landmark_prior_var", "depth_inflation", "gate", "nees_window", "nees_hist_max", "bench_interval"):
            need(float(getattr(self, key)) > 0, key, "must be positive")
        for key in ("sigma_g", "sigma_a", "sigma_gw", "sigma_aw", "sigma_pix", "altitude_amp", "pitch_amp",
                    "init_sigma_theta_deg", "init_sigma_p", "init_sigma_v", "init_sigma_bg", "init_sigma_ba",
                    "landmark_offset", "landmark_thickness", "landmark_half_height", "min_baseline"):
            need(float(getattr(self, key)) >= 0, key, "must be non-negative")
        need(0.0 <= self.speed_amp < 1.0, "speed_amp", "must lie in [0, 1)")
        need(self.imu_hz >= self.cam_hz, "cam_hz", "must not exceed imu_hz")
        ratio = self.imu_hz / self.cam_hz
        need(abs(ratio - round(ratio)) < 1e-9, "cam_hz", "imu_hz must be an integer multiple")
        need(1.0 / self.imu_hz <= 0.1, "imu_hz", "sample period must not exceed 0.1 s")
        for key in ("n_landmarks", "n_runs", "jobs", "max_points", "width", "height", "nees_bins",
                    "bench_trials", "obs_ticks", "obs_landmarks"):
            v = getattr(self, key)
            need(isinstance(v, int) and not isinstance(v, bool) and v >= 1, key, "must be a positive integer")
        need(isinstance(self.max_landmarks, int) and self.max_landmarks >= 0, "max_landmarks",
             "must be a non-negative integer")
        need(isinstance(self.init_min_obs, int) and self.init_min_obs >= 2, "init_min_obs", "must be >= 2")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        need(isinstance(self.filters, list) and self.filters and all(k in KINDS for k in self.filters),
             "filters", f"must be a non-empty list drawn from {KINDS}")
        need(len(set(self.filters)) == len(self.filters), "filters", "duplicates")
        need(self.landmark_init in LANDMARK_INITS, "landmark_init", f"must be one of {LANDMARK_INITS}")
        need(self.camera_mount in CAMERA_MOUNTS, "camera_mount", f"must be one of {tuple(CAMERA_MOUNTS)}")
        need(self.variant in VARIANTS, "variant", f"must be one of {VARIANTS}")
        need(isinstance(self.bench_landmarks, list) and all(isinstance(m, int) and m >= 0 for m in self.bench_landmarks),
             "bench_landmarks", "must be a list of non-negative integers")
        need(isinstance(self.write_updates, bool), "write_updates", "must be a boolean")

    # -- builders ---------------------------------------------------------

    def trajectory(self) -> TrajectorySpec:
        return TrajectorySpec(self.shape, self.radius, self.period, self.yaw_mode, self.duration,
                              self.altitude, self.altitude_amp, self.pitch_amp, self.speed_amp)

    def noise(self) -> NoiseParams:
        return NoiseParams(self.sigma_g, self.sigma_a, self.sigma_gw, self.sigma_aw, self.sigma_pix,
                           gravity=np.array([0.0, 0.0, -self.gravity]))

    def camera(self) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy, CAMERA_MOUNTS[self.camera_mount].copy(), width=self.width, height=self.height)

    def world(self, run: int = 0) -> SimWorld:
        shell = (self.landmark_offset, self.landmark_thickness, self.landmark_half_height)
        return make_world(self.trajectory(), self.n_landmarks, self.seed, run, shell=shell,
                          noise=self.noise(), cam=self.camera(), imu_hz=self.imu_hz, cam_hz=self.cam_hz,
                          max_points=self.max_points)

    def filter_options(self) -> FilterOptions:
        return FilterOptions(variant=self.variant, gate=self.gate, max_landmarks=self.max_landmarks,
                             landmark_init=self.landmark_init, landmark_prior_var=self.landmark_prior_var,
                             depth_inflation=self.depth_inflation, init_min_obs=self.init_min_obs,
                             min_baseline=self.min_baseline)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _line_of(text: str, key: str) -> int:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else 0


def _coerce(key, value):
    default = getattr(RunConfig(), key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list")
        return list(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string")
    return value


def config_from_dict(doc: dict, text: str = "") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("line 1: top level must be a JSON object")
    kw = {}
    for key, value in doc.items():
        line = _line_of(text, key) if text else 0
        where = f"line {line}: " if line else ""
        if key not in _FIELDS:
            raise ConfigError(f"{where}unknown key {key!r}")
        try:
            kw[key] = _coerce(key, value)
        except ConfigError as e:
            raise ConfigError(f"{where}{e}") from None
    try:
        return RunConfig(**kw)
    except ConfigError as e:
        key = str(e).split(":", 1)[0]
        line = _line_of(text, key) if text else 0
        raise ConfigError(f"line {line}: {e}" if line else str(e)) from None


def parse_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno}: malformed JSON ({e.msg})") from None
    return config_from_dict(doc, text)


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
