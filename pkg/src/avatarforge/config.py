"""Run configuration: flat sectioned text format, defaults, validation.

Unknown sections or keys are errors; every offending key is reported in
one pass.  All numeric defaults mirror the published training recipe and
are echoed into checkpoints and export manifests.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .guidance import OMEGA_CHOICES, DiffusionSchedule, NoiseWeights
from .pipeline import STAGE_ORDER, StageConfig, camera_policy_for_body

CONFIG_VERSION = 1

_DEFAULT_STAGE_ITERATIONS = {"geometry": 5000, "appearance": 10000, "animation": 5000}
_DEFAULT_STAGE_LOSSES = {
    "geometry": ("geometry",),
    "appearance": ("appearance",),
    "animation": ("geometry", "appearance"),
}


@dataclass
class StageParams:
    iterations: int
    losses: tuple[str, ...]
    lr_psi_v: float = 1e-4
    lr_psi_a: float = 5e-3
    lambda_n: float = 0.8
    lambda_v: float = 0.1
    lambda_a: float = 0.1
    head_probability: float = 0.2
    log_every: int = 50
    checkpoint_every: int = 500


@dataclass
class ScheduleParams:
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    t_min: float = 0.02
    t_max: float = 0.98
    omega: str = "constant"


@dataclass
class CameraRanges:
    azimuth_min: float = -180.0
    azimuth_max: float = 180.0
    elevation_min: float = -10.0
    elevation_max: float = 30.0
    distance_min: float = 2.0
    distance_max: float = 3.0
    head_azimuth_min: float = -60.0
    head_azimuth_max: float = 60.0
    head_elevation_min: float = -10.0
    head_elevation_max: float = 20.0
    head_distance_min: float = 0.4
    head_distance_max: float = 0.8
    fov_y: float = 45.0


def _default_stage(name: str) -> StageParams:
    return StageParams(
        iterations=_DEFAULT_STAGE_ITERATIONS[name],
        losses=_DEFAULT_STAGE_LOSSES[name],
    )


@dataclass
class RunConfig:
    body_asset: str = "test-humanoid"
    test_humanoid_segments: int = 3
    pose_library: str = ""
    oracle: str = ""
    oracle_timeout: float = 10.0
    output_dir: str = "out"
    seed: int = 0
    prompt: str = "default"
    render_resolution: tuple[int, int] = (800, 800)
    albedo_resolution: tuple[int, int] = (2048, 2048)
    stages: tuple[str, ...] = STAGE_ORDER
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    camera: CameraRanges = field(default_factory=CameraRanges)
    geometry: StageParams = field(default_factory=lambda: _default_stage("geometry"))
    appearance: StageParams = field(default_factory=lambda: _default_stage("appearance"))
    animation: StageParams = field(default_factory=lambda: _default_stage("animation"))

    def build_schedule(self) -> DiffusionSchedule:
        s = self.schedule
        return DiffusionSchedule.linear(
            num_steps=s.num_steps, beta_start=s.beta_start, beta_end=s.beta_end,
            t_range=(s.t_min, s.t_max), omega=s.omega,
        )

    def camera_policy(self, body):
        c = self.camera
        return camera_policy_for_body(
            body,
            resolution=self.render_resolution,
            azimuth_range=(c.azimuth_min, c.azimuth_max),
            elevation_range=(c.elevation_min, c.elevation_max),
            distance_range=(c.distance_min, c.distance_max),
            head_azimuth_range=(c.head_azimuth_min, c.head_azimuth_max),
            head_elevation_range=(c.head_elevation_min, c.head_elevation_max),
            head_distance_range=(c.head_distance_min, c.head_distance_max),
            fov_y=c.fov_y,
        )

    def stage_configs(self, body) -> dict[str, StageConfig]:
        schedule = self.build_schedule()
        policy = self.camera_policy(body)
        out = {}
        for name in STAGE_ORDER:
            p: StageParams = getattr(self, name)
            out[name] = StageConfig(
                iterations=p.iterations,
                lr_psi_v=p.lr_psi_v,
                lr_psi_a=p.lr_psi_a,
                noise_weights=NoiseWeights(p.lambda_n, p.lambda_v, p.lambda_a),
                head_probability=p.head_probability,
                camera_policy=policy,
                enabled_losses=p.losses,
                schedule=schedule,
                prompt=self.prompt,
                log_every=p.log_every,
                checkpoint_every=p.checkpoint_every,
            )
        return out


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_RUN_KEYS = {
    "body_asset": str,
    "test_humanoid_segments": int,
    "pose_library": str,
    "oracle": str,
    "oracle_timeout": float,
    "output_dir": str,
    "seed": int,
    "prompt": str,
    "render_width": int,
    "render_height": int,
    "albedo_width": int,
    "albedo_height": int,
    "stages": str,
}

_STAGE_KEYS = {
    "iterations": int,
    "lr_psi_v": float,
    "lr_psi_a": float,
    "lambda_n": float,
    "lambda_v": float,
    "lambda_a": float,
    "head_probability": float,
    "losses": str,
    "log_every": int,
    "checkpoint_every": int,
}


_SCHEDULE_KEYS = {"num_steps": int, "beta_start": float, "beta_end": float,
                  "t_min": float, "t_max": float, "omega": str}
_CAMERA_KEYS = {f.name: float for f in fields(CameraRanges)}

_SECTIONS = {"run", "version", "schedule", "camera",
             "stage.geometry", "stage.appearance", "stage.animation"}


def parse_run_config(source) -> RunConfig:
    """Parse a config file (path or text).  Relative paths resolve against
    the config file's directory."""
    if isinstance(source, (str, Path)) and "\n" not in str(source):
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}")
        base = path.parent
    else:
        text = str(source)
        base = Path.cwd()

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}")

    errors: list[str] = []
    cfg = RunConfig()

    for section in parser.sections():
        if section not in _SECTIONS:
            errors.append(f"unknown section [{section}]")

    def read_section(section: str, keys: dict[str, type]) -> dict:
        values = {}
        if not parser.has_section(section):
            return values
        for key, raw in parser.items(section):
            if key not in keys:
                errors.append(f"[{section}] unknown key {key!r}")
                continue
            caster = keys[key]
            try:
                values[key] = caster(raw) if caster is not str else raw
            except ValueError:
                errors.append(f"[{section}] {key} = {raw!r} is not a valid {caster.__name__}")
        return values

    if parser.has_section("version"):
        v = read_section("version", {"config": int}).get("config", CONFIG_VERSION)
        if v != CONFIG_VERSION:
            errors.append(f"[version] config = {v} unsupported (expected {CONFIG_VERSION})")

    run = read_section("run", _RUN_KEYS)
    for key in ("body_asset", "test_humanoid_segments", "pose_library", "oracle",
                "oracle_timeout", "output_dir", "seed", "prompt"):
        if key in run:
            setattr(cfg, key, run[key])
    if "render_width" in run or "render_height" in run:
        cfg.render_resolution = (
            run.get("render_width", cfg.render_resolution[0]),
            run.get("render_height", cfg.render_resolution[1]),
        )
    if "albedo_width" in run or "albedo_height" in run:
        cfg.albedo_resolution = (
            run.get("albedo_width", cfg.albedo_resolution[0]),
            run.get("albedo_height", cfg.albedo_resolution[1]),
        )
    if "stages" in run:
        cfg.stages = tuple(s.strip() for s in run["stages"].split(",") if s.strip())

    sched = read_section("schedule", _SCHEDULE_KEYS)
    for key, val in sched.items():
        setattr(cfg.schedule, key, val)

    cam = read_section("camera", _CAMERA_KEYS)
    for key, val in cam.items():
        setattr(cfg.camera, key, val)

    for name in STAGE_ORDER:
        section = f"stage.{name}"
        vals = read_section(section, _STAGE_KEYS)
        params: StageParams = getattr(cfg, name)
        for key, val in vals.items():
            if key == "losses":
                losses = tuple(s.strip() for s in val.split(",") if s.strip())
                bad = set(losses) - {"geometry", "appearance"}
                if bad or not losses:
                    errors.append(f"[{section}] losses must be a non-empty subset of geometry,appearance")
                else:
                    params.losses = losses
            else:
                setattr(params, key, val)

    # resolve paths relative to the config file
    for key in ("body_asset", "pose_library"):
        val = getattr(cfg, key)
        if val and val != "test-humanoid" and not Path(val).is_absolute():
            setattr(cfg, key, str((base / val).resolve()))
    if cfg.oracle.startswith("analytic:"):
        target = cfg.oracle.split(":", 1)[1]
        if target and not Path(target).is_absolute():
            cfg.oracle = "analytic:" + str((base / target).resolve())

    errors.extend(validate_run_config(cfg))
    if errors:
        raise ConfigError("invalid config: " + "; ".join(errors))
    return cfg


def validate_run_config(cfg: RunConfig) -> list[str]:
    """All structural problems, collected (does not raise)."""
    errors = []
    unknown = [s for s in cfg.stages if s not in STAGE_ORDER]
    if unknown:
        errors.append(f"[run] stages contains unknown stage(s) {unknown}")
    elif len(set(cfg.stages)) != len(cfg.stages):
        errors.append("[run] stages contains duplicates")
    else:
        order = [STAGE_ORDER.index(s) for s in cfg.stages]
        if order != sorted(order):
            errors.append(
                f"[run] stages must follow the fixed order {'->'.join(STAGE_ORDER)}, got {','.join(cfg.stages)}"
            )
    if not cfg.stages:
        errors.append("[run] stages is empty")
    if "animation" in cfg.stages and not cfg.pose_library:
        errors.append("[run] pose_library is required when the animation stage is enabled")
    if cfg.body_asset != "test-humanoid" and not Path(cfg.body_asset).exists():
        errors.append(f"[run] body_asset path does not exist: {cfg.body_asset}")
    if cfg.pose_library and not Path(cfg.pose_library).exists():
        errors.append(f"[run] pose_library path does not exist: {cfg.pose_library}")
    if cfg.oracle:
        kind, _, rest = cfg.oracle.partition(":")
        if kind == "analytic":
            if not rest:
                errors.append("[run] oracle analytic:<target-image> needs a path")
            elif not Path(rest).exists():
                errors.append(f"[run] oracle target image does not exist: {rest}")
        elif kind == "remote":
            if ":" not in rest:
                errors.append("[run] oracle remote:<host:port> needs host:port")
        else:
            errors.append(f"[run] oracle must be analytic:<path> or remote:<host:port>, got {cfg.oracle!r}")
    else:
        errors.append("[run] oracle is required")
    if cfg.render_resolution[0] <= 0 or cfg.render_resolution[1] <= 0:
        errors.append("[run] render resolution must be positive")
    if cfg.albedo_resolution[0] <= 0 or cfg.albedo_resolution[1] <= 0:
        errors.append("[run] albedo resolution must be positive")
    if cfg.test_humanoid_segments < 2:
        errors.append("[run] test_humanoid_segments must be >= 2")
    s = cfg.schedule
    if s.num_steps < 2:
        errors.append("[schedule] num_steps must be >= 2")
    if not (0 < s.beta_start < 1 and 0 < s.beta_end < 1):
        errors.append("[schedule] betas must lie in (0, 1)")
    if not (0 <= s.t_min < s.t_max <= 1):
        errors.append("[schedule] need 0 <= t_min < t_max <= 1")
    if s.omega not in OMEGA_CHOICES:
        errors.append(f"[schedule] omega must be one of {OMEGA_CHOICES}")
    for name in STAGE_ORDER:
        p: StageParams = getattr(cfg, name)
        sec = f"stage.{name}"
        if p.iterations < 0:
            errors.append(f"[{sec}] iterations must be >= 0")
        if p.lr_psi_v <= 0 or p.lr_psi_a <= 0:
            errors.append(f"[{sec}] learning rates must be positive")
        if p.lambda_n < 0 or p.lambda_v < 0 or p.lambda_a < 0:
            errors.append(f"[{sec}] lambdas must be non-negative")
        if not 0 <= p.head_probability <= 1:
            errors.append(f"[{sec}] head_probability must be in [0, 1]")
        if p.log_every < 1 or p.checkpoint_every < 1:
            errors.append(f"[{sec}] log_every and checkpoint_every must be >= 1")
    return errors


def serialize_run_config(cfg: RunConfig) -> str:
    """Full explicit echo of every key; parse(serialize(cfg)) == cfg."""
    fnum = lambda x: f"{x:.17g}"
    out = io.StringIO()
    out.write("[version]\nconfig = 1\n\n")
    out.write("[run]\n")
    out.write(f"body_asset = {cfg.body_asset}\n")
    out.write(f"test_humanoid_segments = {cfg.test_humanoid_segments}\n")
    out.write(f"pose_library = {cfg.pose_library}\n")
    out.write(f"oracle = {cfg.oracle}\n")
    out.write(f"oracle_timeout = {fnum(cfg.oracle_timeout)}\n")
    out.write(f"output_dir = {cfg.output_dir}\n")
    out.write(f"seed = {cfg.seed}\n")
    out.write(f"prompt = {cfg.prompt}\n")
    out.write(f"render_width = {cfg.render_resolution[0]}\n")
    out.write(f"render_height = {cfg.render_resolution[1]}\n")
    out.write(f"albedo_width = {cfg.albedo_resolution[0]}\n")
    out.write(f"albedo_height = {cfg.albedo_resolution[1]}\n")
    out.write(f"stages = {','.join(cfg.stages)}\n\n")
    out.write("[schedule]\n")
    s = cfg.schedule
    out.write(f"num_steps = {s.num_steps}\n")
    out.write(f"beta_start = {fnum(s.beta_start)}\n")
    out.write(f"beta_end = {fnum(s.beta_end)}\n")
    out.write(f"t_min = {fnum(s.t_min)}\n")
    out.write(f"t_max = {fnum(s.t_max)}\n")
    out.write(f"omega = {s.omega}\n\n")
    out.write("[camera]\n")
    for f_ in fields(CameraRanges):
        out.write(f"{f_.name} = {fnum(getattr(cfg.camera, f_.name))}\n")
    out.write("\n")
    for name in STAGE_ORDER:
        p: StageParams = getattr(cfg, name)
        out.write(f"[stage.{name}]\n")
        out.write(f"iterations = {p.iterations}\n")
        out.write(f"lr_psi_v = {fnum(p.lr_psi_v)}\n")
        out.write(f"lr_psi_a = {fnum(p.lr_psi_a)}\n")
        out.write(f"lambda_n = {fnum(p.lambda_n)}\n")
        out.write(f"lambda_v = {fnum(p.lambda_v)}\n")
        out.write(f"lambda_a = {fnum(p.lambda_a)}\n")
        out.write(f"head_probability = {fnum(p.head_probability)}\n")
        out.write(f"losses = {','.join(p.losses)}\n")
        out.write(f"log_every = {p.log_every}\n")
        out.write(f"checkpoint_every = {p.checkpoint_every}\n\n")
    return out.getvalue()


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_run_config(cfg).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Input construction
# ---------------------------------------------------------------------------

def load_run_inputs(cfg: RunConfig):
    """Build (body, pose_library_or_None) from a validated config."""
    from . import body as body_mod

    if cfg.body_asset == "test-humanoid":
        body = body_mod.generate_test_humanoid(cfg.test_humanoid_segments)
    else:
        body = body_mod.load_body_asset(cfg.body_asset)
    poses = None
    if cfg.pose_library:
        poses = body_mod.load_pose_library(cfg.pose_library)
        if poses.num_joints != body.num_joints:
            raise ConfigError(
                f"[run] pose_library has {poses.num_joints} joints but body has {body.num_joints}"
            )
    return body, poses


def build_oracle(cfg: RunConfig):
    """Instantiate the configured guidance oracle."""
    from .guidance import AnalyticTargetOracle
    from .remote import RemoteOracle
    from .render import load_image

    kind, _, rest = cfg.oracle.partition(":")
    if kind == "analytic":
        target = load_image(rest)
        w, h = cfg.render_resolution
        if target.shape != (h, w, 3):
            raise ConfigError(
                f"[run] oracle target image is {target.shape[1]}x{target.shape[0]}, "
                f"render resolution is {w}x{h}"
            )
        return AnalyticTargetOracle(cfg.build_schedule(), target=target)
    if kind == "remote":
        return RemoteOracle(rest, timeout=cfg.oracle_timeout)
    raise ConfigError(f"[run] unsupported oracle spec {cfg.oracle!r}")
