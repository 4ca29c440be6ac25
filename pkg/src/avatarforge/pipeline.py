"""Three-stage progressive training loop.

Stage order is fixed: geometry (vertex offsets via normal renders), then
appearance (albedo map via unlit color renders), then animation
refinement (both, at library poses).  Each stage draws one avatar sample,
one camera, one timestep/noise pair per estimator call, takes one Adam
step per optimized block, and is fully deterministic under the run seed.

Per-iteration draw order (fixed for reproducibility): avatar perturbation
(vertex field, then albedo field), camera, pose index (animation only),
normal-path guidance (t, noise), color-path guidance (t, noise).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import avp as avp_mod
from . import body as body_mod
from . import render as render_mod
from .errors import GuidanceError, TrainingError
from .guidance import (
    DiffusionSchedule,
    GuidanceCondition,
    GuidanceOracle,
    NoiseWeights,
    asds_gradient_info,
    compose_condition_id,
    effective_noise_std,
)

log = logging.getLogger("avatarforge.pipeline")

STAGE_ORDER = ("geometry", "appearance", "animation")
CANONICAL_POSE_LABEL = "canonical"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 1.0
MAX_SKIP_FRACTION = 0.01


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamMoments:
    """First/second moment estimates plus the applied-step count."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, block: np.ndarray) -> "AdamMoments":
        return cls(m=np.zeros_like(block), v=np.zeros_like(block), step=0)


def adam_step(
    block: np.ndarray,
    grad: np.ndarray,
    moments: AdamMoments,
    lr: float,
    iteration: int,
) -> tuple[np.ndarray, AdamMoments]:
    """One bias-corrected Adam update.  iteration is the 1-based step index."""
    if grad.shape != block.shape:
        raise ValueError(f"grad shape {grad.shape} does not match block {block.shape}")
    if iteration < 1:
        raise ValueError(f"iteration must be >= 1, got {iteration}")
    m = ADAM_BETA1 * moments.m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * moments.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1**iteration)
    v_hat = v / (1.0 - ADAM_BETA2**iteration)
    new_block = block - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_block, AdamMoments(m=m, v=v, step=iteration)


def clip_global_norm(grad: np.ndarray, max_norm: float = GRAD_CLIP_NORM) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


# ---------------------------------------------------------------------------
# Configuration and state
# ---------------------------------------------------------------------------

@dataclass
class StageConfig:
    """Per-stage knobs; defaults mirror the published training recipe."""

    iterations: int
    lr_psi_v: float = 1e-4
    lr_psi_a: float = 5e-3
    noise_weights: NoiseWeights = field(default_factory=NoiseWeights)
    head_probability: float = 0.2
    camera_policy: render_mod.CameraPolicy = field(default_factory=render_mod.CameraPolicy)
    enabled_losses: tuple[str, ...] = ("geometry", "appearance")
    schedule: DiffusionSchedule = field(default_factory=DiffusionSchedule.linear)
    prompt: str = "default"
    log_every: int = 50
    checkpoint_every: int = 500

    def __post_init__(self):
        # zero iterations is the documented no-op configuration
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.lr_psi_v <= 0 or self.lr_psi_a <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.head_probability <= 1.0:
            raise ValueError(f"head_probability must be in [0, 1], got {self.head_probability}")
        bad = set(self.enabled_losses) - {"geometry", "appearance"}
        if bad or not self.enabled_losses:
            raise ValueError(f"enabled_losses must be a non-empty subset of geometry/appearance, got {self.enabled_losses}")

    def effective_policy(self) -> render_mod.CameraPolicy:
        return replace(self.camera_policy, head_probability=self.head_probability)


@dataclass
class TrainState:
    """Everything needed to continue training bit-exactly."""

    avatar: avp_mod.AvatarParams
    moments_v: AdamMoments
    moments_a: AdamMoments
    stage: str = "geometry"
    iteration: int = 0
    skipped: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @classmethod
    def initialize(cls, body: body_mod.ParametricBody, albedo_resolution: tuple[int, int], seed: int) -> "TrainState":
        avatar = avp_mod.AvatarParams.initialize(body.num_vertices, albedo_resolution, rng_seed=seed)
        return cls(
            avatar=avatar,
            moments_v=AdamMoments.zeros_like(avatar.psi_v),
            moments_a=AdamMoments.zeros_like(avatar.psi_a),
            stage="geometry",
            iteration=0,
            skipped=0,
            rng=np.random.default_rng(seed),
        )


def advance_stage(state: TrainState) -> TrainState:
    """Move to the next stage: reset the iteration counter and both
    optimizer moment blocks (fresh Adam per stage)."""
    idx = STAGE_ORDER.index(state.stage)
    state.stage = STAGE_ORDER[idx + 1] if idx + 1 < len(STAGE_ORDER) else "done"
    state.iteration = 0
    state.skipped = 0
    state.moments_v = AdamMoments.zeros_like(state.avatar.psi_v)
    state.moments_a = AdamMoments.zeros_like(state.avatar.psi_a)
    return state


def anchors_from_body(body: body_mod.ParametricBody) -> tuple[np.ndarray, np.ndarray]:
    """Default camera anchors: mesh centroid and the highest joint."""
    joints = body_mod.compute_joints(body, body.template_vertices)
    return body.template_vertices.mean(axis=0), joints[int(np.argmax(joints[:, 1]))]


def camera_policy_for_body(
    body: body_mod.ParametricBody,
    resolution: tuple[int, int] = (800, 800),
    **overrides,
) -> render_mod.CameraPolicy:
    body_anchor, head_anchor = anchors_from_body(body)
    return render_mod.CameraPolicy(
        body_anchor=body_anchor, head_anchor=head_anchor, resolution=resolution, **overrides
    )


# ---------------------------------------------------------------------------
# Stage loops
# ---------------------------------------------------------------------------

def _normalized_image_err(pixel_grad: np.ndarray, info, schedule: DiffusionSchedule) -> float:
    """mean |grad| rescaled by the analytic-cancellation factor; with the
    analytic oracle this equals mean |x0 - target| independent of t."""
    ab = schedule.alpha_bar(info.t)
    scale = info.omega * np.sqrt(ab) / np.sqrt(1.0 - ab)
    return float(np.mean(np.abs(pixel_grad)) / scale)


def _check_skip_budget(state: TrainState, config: StageConfig) -> None:
    if config.iterations and state.skipped > MAX_SKIP_FRACTION * config.iterations:
        raise TrainingError(
            f"stage {state.stage!r}: {state.skipped}/{config.iterations} iterations skipped "
            f"(> {MAX_SKIP_FRACTION:.0%} budget)"
        )


def _emit(on_progress, config, state, eff_std, sigma_v, sigma_a, image_err) -> None:
    if state.iteration % config.log_every and state.iteration != config.iterations:
        return
    record = {
        "stage": state.stage,
        "iter": state.iteration,
        "eff_std": eff_std,
        "sigma_v": sigma_v,
        "sigma_a": sigma_a,
        "image_err": image_err,
    }
    log.info(
        "stage=%(stage)s iter=%(iter)d eff_std=%(eff_std).6f sigma_v=%(sigma_v).6f "
        "sigma_a=%(sigma_a).6f image_err=%(image_err).6f",
        record,
    )
    if on_progress is not None:
        on_progress(record)


def _maybe_checkpoint(on_checkpoint, config, state) -> None:
    if on_checkpoint is not None and state.iteration and state.iteration % config.checkpoint_every == 0:
        on_checkpoint(state)


def run_geometry_stage(
    body: body_mod.ParametricBody,
    state: TrainState,
    config: StageConfig,
    oracle: GuidanceOracle,
    on_progress=None,
    on_checkpoint=None,
) -> TrainState:
    """Optimize vertex offsets against normal renders at the canonical pose."""
    if state.stage != "geometry":
        raise ValueError(f"state is in stage {state.stage!r}, expected 'geometry'")
    if "geometry" not in config.enabled_losses:
        raise ValueError("geometry stage requires the geometry loss to be enabled")
    coeffs = body_mod.BodyCoeffs.zeros(body)
    policy = config.effective_policy()
    condition = GuidanceCondition(
        condition_id=compose_condition_id(config.prompt, "normal", CANONICAL_POSE_LABEL)
    )
    while state.iteration < config.iterations:
        sample = avp_mod.sample_perturbed(state.avatar, state.rng)
        camera = render_mod.sample_camera(policy, state.rng)
        state.iteration += 1
        try:
            verts = body_mod.blend_template(body, coeffs, sample.psi_v_sample)
            normals = body_mod.vertex_normals(verts, body.faces)
            out = render_mod.render_normal(verts, body.faces, normals, camera)
            pixel_grad, info = asds_gradient_info(
                config.schedule, oracle, out.image, condition,
                config.noise_weights, sample.sigma_v, sample.sigma_a, state.rng,
            )
            grad = render_mod.backward_normal(out, pixel_grad)
        except GuidanceError as exc:
            state.skipped += 1
            log.warning("geometry iter %d skipped: %s", state.iteration, exc)
            continue
        if not np.isfinite(grad).all():
            state.skipped += 1
            log.warning("geometry iter %d skipped: non-finite gradient", state.iteration)
            continue
        grad = clip_global_norm(grad)
        state.avatar.psi_v, state.moments_v = adam_step(
            state.avatar.psi_v, grad, state.moments_v, config.lr_psi_v, state.moments_v.step + 1
        )
        _emit(on_progress, config, state, info.effective_std, sample.sigma_v, sample.sigma_a,
              _normalized_image_err(pixel_grad, info, config.schedule))
        _maybe_checkpoint(on_checkpoint, config, state)
    _check_skip_budget(state, config)
    return state


def run_appearance_stage(
    body: body_mod.ParametricBody,
    state: TrainState,
    config: StageConfig,
    oracle: GuidanceOracle,
    on_progress=None,
    on_checkpoint=None,
) -> TrainState:
    """Optimize the albedo map at the canonical pose; vertex offsets frozen."""
    if state.stage != "appearance":
        raise ValueError(f"state is in stage {state.stage!r}, expected 'appearance'")
    if "appearance" not in config.enabled_losses:
        raise ValueError("appearance stage requires the appearance loss to be enabled")
    coeffs = body_mod.BodyCoeffs.zeros(body)
    policy = config.effective_policy()
    condition = GuidanceCondition(
        condition_id=compose_condition_id(config.prompt, "albedo", CANONICAL_POSE_LABEL)
    )
    # psi_v is frozen for the whole stage: blend once
    verts = body_mod.blend_template(body, coeffs, state.avatar.psi_v)
    while state.iteration < config.iterations:
        sample = avp_mod.sample_perturbed(state.avatar, state.rng)
        camera = render_mod.sample_camera(policy, state.rng)
        state.iteration += 1
        try:
            out = render_mod.render_albedo(verts, body.faces, body.uv_coords, sample.psi_a_sample, camera)
            pixel_grad, info = asds_gradient_info(
                config.schedule, oracle, out.image, condition,
                config.noise_weights, sample.sigma_v, sample.sigma_a, state.rng,
            )
            grad = render_mod.backward_albedo(out, pixel_grad)
        except GuidanceError as exc:
            state.skipped += 1
            log.warning("appearance iter %d skipped: %s", state.iteration, exc)
            continue
        if not np.isfinite(grad).all():
            state.skipped += 1
            log.warning("appearance iter %d skipped: non-finite gradient", state.iteration)
            continue
        grad = clip_global_norm(grad)
        state.avatar.psi_a, state.moments_a = adam_step(
            state.avatar.psi_a, grad, state.moments_a, config.lr_psi_a, state.moments_a.step + 1
        )
        _emit(on_progress, config, state, info.effective_std, sample.sigma_v, sample.sigma_a,
              _normalized_image_err(pixel_grad, info, config.schedule))
        _maybe_checkpoint(on_checkpoint, config, state)
    _check_skip_budget(state, config)
    return state


def run_animation_stage(
    body: body_mod.ParametricBody,
    state: TrainState,
    config: StageConfig,
    oracle: GuidanceOracle,
    poses: body_mod.PoseLibrary,
    on_progress=None,
    on_checkpoint=None,
) -> TrainState:
    """Jointly refine offsets and albedo at sampled library poses.

    The vertex-offset gradient is the normal-path pullback chained through
    the skinning rotations.  Under unlit albedo rendering the color-path
    contribution to the offsets is identically zero (no position gradient
    leaves backward_albedo), so the implemented offset gradient reduces to
    its normal-image term; the albedo gradient is the color-path pullback.
    """
    if state.stage != "animation":
        raise ValueError(f"state is in stage {state.stage!r}, expected 'animation'")
    if poses is None or len(poses.labels) == 0:
        raise TrainingError("animation stage needs a non-empty pose library")
    if poses.num_joints != body.num_joints:
        raise TrainingError(
            f"pose library has {poses.num_joints} joints, body has {body.num_joints}"
        )
    coeffs = body_mod.BodyCoeffs.zeros(body)
    policy = config.effective_policy()
    # joints regressed from the un-offset shaped template: skinning transforms
    # are constants of the offsets, keeping the offset chain rule exact
    joints = body_mod.compute_joints(body, body_mod.blend_template(
        body, coeffs, np.zeros((body.num_vertices, 3))))
    use_geo = "geometry" in config.enabled_losses
    use_app = "appearance" in config.enabled_losses
    while state.iteration < config.iterations:
        sample = avp_mod.sample_perturbed(state.avatar, state.rng)
        camera = render_mod.sample_camera(policy, state.rng)
        pose_idx = int(state.rng.integers(len(poses.labels)))
        pose = poses.poses[pose_idx]
        label = poses.labels[pose_idx]
        state.iteration += 1
        errs = []
        eff = effective_noise_std(config.noise_weights, sample.sigma_v, sample.sigma_a)
        try:
            shaped = body_mod.blend_template(body, coeffs, sample.psi_v_sample)
            posed = body_mod.linear_blend_skinning(body, shaped, joints, pose)
            vgrad = None
            agrad = None
            if use_geo:
                normals = body_mod.vertex_normals(posed, body.faces)
                out_n = render_mod.render_normal(posed, body.faces, normals, camera)
                cond_n = GuidanceCondition(condition_id=compose_condition_id(config.prompt, "normal", label))
                pg_n, info_n = asds_gradient_info(
                    config.schedule, oracle, out_n.image, cond_n,
                    config.noise_weights, sample.sigma_v, sample.sigma_a, state.rng,
                )
                posed_grad = render_mod.backward_normal(out_n, pg_n)
                rot = body_mod.blended_rotations(body, joints, pose)
                vgrad = np.einsum("nab,na->nb", rot, posed_grad)
                errs.append(_normalized_image_err(pg_n, info_n, config.schedule))
            if use_app:
                out_a = render_mod.render_albedo(posed, body.faces, body.uv_coords, sample.psi_a_sample, camera)
                cond_a = GuidanceCondition(condition_id=compose_condition_id(config.prompt, "albedo", label))
                pg_a, info_a = asds_gradient_info(
                    config.schedule, oracle, out_a.image, cond_a,
                    config.noise_weights, sample.sigma_v, sample.sigma_a, state.rng,
                )
                agrad = render_mod.backward_albedo(out_a, pg_a)
                errs.append(_normalized_image_err(pg_a, info_a, config.schedule))
        except GuidanceError as exc:
            state.skipped += 1
            log.warning("animation iter %d skipped: %s", state.iteration, exc)
            continue
        finite = all(np.isfinite(g).all() for g in (vgrad, agrad) if g is not None)
        if not finite:
            state.skipped += 1
            log.warning("animation iter %d skipped: non-finite gradient", state.iteration)
            continue
        if vgrad is not None:
            state.avatar.psi_v, state.moments_v = adam_step(
                state.avatar.psi_v, clip_global_norm(vgrad), state.moments_v,
                config.lr_psi_v, state.moments_v.step + 1,
            )
        if agrad is not None:
            state.avatar.psi_a, state.moments_a = adam_step(
                state.avatar.psi_a, clip_global_norm(agrad), state.moments_a,
                config.lr_psi_a, state.moments_a.step + 1,
            )
        _emit(on_progress, config, state, eff, sample.sigma_v, sample.sigma_a,
              float(np.mean(errs)) if errs else float("nan"))
        _maybe_checkpoint(on_checkpoint, config, state)
    _check_skip_budget(state, config)
    return state


_STAGE_RUNNERS = {
    "geometry": run_geometry_stage,
    "appearance": run_appearance_stage,
    "animation": run_animation_stage,
}


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def run_full_pipeline(config, oracle: GuidanceOracle | None = None, resume=None) -> dict:
    """Execute the configured stages in order and export the final bundle.

    ``config`` is a RunConfig or a path to a config file.  ``oracle``
    overrides the configured oracle spec (used by tests to inject
    per-condition analytic targets).  ``resume`` is a checkpoint path.

    Checkpoints are written at stage boundaries and every
    ``checkpoint_every`` iterations; on failure the last good checkpoint
    stays on disk.  Returns a record of produced artifacts.
    """
    from pathlib import Path

    from . import checkpoint as ckpt_mod
    from . import export as export_mod
    from .config import RunConfig, build_oracle, config_hash, load_run_inputs, parse_run_config, serialize_run_config

    if not isinstance(config, RunConfig):
        config = parse_run_config(config)
    cfg_hash = config_hash(config)
    cfg_text = serialize_run_config(config)

    body, poses = load_run_inputs(config)
    if oracle is None:
        oracle = build_oracle(config)

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    progress_path = out_dir / "progress.log"

    if resume is not None:
        state, meta = ckpt_mod.load_checkpoint(resume)
        if meta.get("config_hash") != cfg_hash:
            log.warning("resuming with a different config hash (%s -> %s)", meta.get("config_hash"), cfg_hash)
    else:
        state = TrainState.initialize(body, config.albedo_resolution, config.seed)

    stage_configs = config.stage_configs(body)

    with _output_lock(out_dir):
        progress_file = open(progress_path, "a")

        def on_progress(record):
            progress_file.write(
                "stage={stage} iter={iter} eff_std={eff_std:.6f} sigma_v={sigma_v:.6f} "
                "sigma_a={sigma_a:.6f} image_err={image_err:.6f}\n".format(**record)
            )
            progress_file.flush()

        def write_ckpt(st: TrainState, tag: str | None = None):
            name = tag or f"ckpt-{st.stage}-{st.iteration:06d}"
            path = ckpt_dir / f"{name}.avck"
            ckpt_mod.save_checkpoint(path, st, config_hash=cfg_hash, config_text=cfg_text)
            ckpt_mod.save_checkpoint(ckpt_dir / "latest.avck", st, config_hash=cfg_hash, config_text=cfg_text)
            return path

        try:
            if resume is None:
                write_ckpt(state)
            for stage in config.stages:
                if state.stage == "done" or STAGE_ORDER.index(stage) < STAGE_ORDER.index(state.stage):
                    continue  # already completed (resume)
                runner = _STAGE_RUNNERS[stage]
                kwargs = {"poses": poses} if stage == "animation" else {}
                runner(
                    body, state, stage_configs[stage], oracle,
                    on_progress=on_progress, on_checkpoint=write_ckpt, **kwargs,
                )
                advance_stage(state)
                write_ckpt(state, tag=f"ckpt-after-{stage}")
            final_ckpt = write_ckpt(state, tag="final")
            bundle = export_mod.export_bundle(
                body=body,
                avatar=state.avatar,
                out_dir=out_dir / "bundle",
                poses=poses,
                config_hash=cfg_hash,
                config_text=cfg_text,
            )
        finally:
            progress_file.close()

    return {
        "output_dir": str(out_dir),
        "final_checkpoint": str(final_ckpt),
        "bundle": bundle,
        "stage": state.stage,
    }


class _output_lock:
    """Reject concurrent runs on the same output directory via a lock file."""

    def __init__(self, out_dir):
        from pathlib import Path

        self.path = Path(out_dir) / ".avatarforge.lock"

    def __enter__(self):
        import os

        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise TrainingError(
                f"output directory is locked by another run ({self.path}); "
                "remove the lock file if that run is dead"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
