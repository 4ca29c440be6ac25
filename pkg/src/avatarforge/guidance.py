"""Diffusion schedule, avatar-aware noise, and score-distillation gradients.

The pixel-space gradient estimators return w(t) * (predicted_noise -
injected_noise); the caller chains the result through the renderer's
backward pass.  The epsilon predictor is a pluggable oracle: an analytic
target inversion for desk-scale runs, or a remote diffusion server.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GuidanceError

OMEGA_CHOICES = ("constant", "one_minus_alpha_bar")


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-timestep retention factors alpha_t and their cumulative products.

    Timesteps are 1-based: alpha_bar(t) = prod_{i<=t} alpha_i.  Training
    draws t uniformly from the fractional ``t_range`` of [1, T].
    """

    alphas: np.ndarray
    t_range: tuple[float, float] = (0.02, 0.98)
    omega: str = "constant"
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        object.__setattr__(self, "alphas", alphas)
        if alphas.ndim != 1 or alphas.size == 0:
            raise ValueError("alphas must be a non-empty 1-d array")
        if (alphas <= 0).any() or (alphas >= 1).any():
            raise ValueError("every alpha_t must lie in (0, 1)")
        if self.omega not in OMEGA_CHOICES:
            raise ValueError(f"omega must be one of {OMEGA_CHOICES}, got {self.omega!r}")
        lo, hi = self.t_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"t_range must satisfy 0 <= lo < hi <= 1, got {self.t_range}")
        object.__setattr__(self, "alpha_bars", np.cumprod(alphas))

    @classmethod
    def linear(
        cls,
        num_steps: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 2e-2,
        t_range: tuple[float, float] = (0.02, 0.98),
        omega: str = "constant",
    ) -> "DiffusionSchedule":
        betas = np.linspace(beta_start, beta_end, num_steps)
        return cls(alphas=1.0 - betas, t_range=t_range, omega=omega)

    @property
    def num_steps(self) -> int:
        return self.alphas.size

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.num_steps:
            raise ValueError(f"timestep {t} out of range [1, {self.num_steps}]")
        return t

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check_t(t) - 1])

    def omega_at(self, t: int) -> float:
        if self.omega == "constant":
            self.check_t(t)
            return 1.0
        return 1.0 - self.alpha_bar(t)


@dataclass(frozen=True)
class NoiseWeights:
    """Mixing weights for the avatar-aware noise composition."""

    lambda_n: float = 0.8
    lambda_v: float = 0.1
    lambda_a: float = 0.1

    def __post_init__(self):
        if self.lambda_n < 0 or self.lambda_v < 0 or self.lambda_a < 0:
            raise ValueError("noise weights must be non-negative")


@dataclass(frozen=True)
class GuidanceCondition:
    """What the oracle is conditioned on.

    Either a target image (analytic oracle) or an opaque identifier a
    remote server resolves to a text prompt.
    """

    condition_id: str = "default"
    target_image: np.ndarray | None = None


def compose_condition_id(prompt: str, mode: str, pose_label: str) -> str:
    """Canonical condition id the training loop emits per iteration."""
    return f"{prompt}|{mode}|{pose_label}"


class GuidanceOracle:
    """Epsilon predictor interface: estimate the noise in a noised image."""

    def predict(self, z_t: np.ndarray, t: int, condition: GuidanceCondition) -> np.ndarray:
        raise NotImplementedError


class AnalyticTargetOracle(GuidanceOracle):
    """Closed-form oracle that inverts the forward noising toward a target.

    predict(z_t, t) = (z_t - sqrt(alpha_bar_t) * target) / sqrt(1 -
    alpha_bar_t), so score-distillation descent on a free image converges
    to the target.  The target is resolved per call: an explicit
    condition.target_image wins, then the per-condition-id table, then the
    construction default.
    """

    def __init__(
        self,
        schedule: DiffusionSchedule,
        target: np.ndarray | None = None,
        targets: dict[str, np.ndarray] | None = None,
    ):
        if target is None and not targets:
            raise ValueError("analytic oracle needs a target image or a targets table")
        self.schedule = schedule
        self.target = None if target is None else np.asarray(target, dtype=np.float64)
        self.targets = {k: np.asarray(v, dtype=np.float64) for k, v in (targets or {}).items()}

    def _resolve(self, condition: GuidanceCondition) -> np.ndarray:
        if condition.target_image is not None:
            return np.asarray(condition.target_image, dtype=np.float64)
        if condition.condition_id in self.targets:
            return self.targets[condition.condition_id]
        if self.target is None:
            raise GuidanceError(
                f"no target for condition {condition.condition_id!r}; known: {sorted(self.targets)}"
            )
        return self.target

    def predict(self, z_t: np.ndarray, t: int, condition: GuidanceCondition) -> np.ndarray:
        target = self._resolve(condition)
        if target.shape != z_t.shape:
            raise GuidanceError(f"target shape {target.shape} does not match image {z_t.shape}")
        ab = self.schedule.alpha_bar(t)
        return (z_t - math.sqrt(ab) * target) / math.sqrt(1.0 - ab)


def analytic_target_oracle(
    schedule: DiffusionSchedule,
    target: np.ndarray | None = None,
    targets: dict[str, np.ndarray] | None = None,
) -> AnalyticTargetOracle:
    return AnalyticTargetOracle(schedule, target=target, targets=targets)


# ---------------------------------------------------------------------------
# Noising
# ---------------------------------------------------------------------------

def sample_timestep(schedule: DiffusionSchedule, rng: np.random.Generator) -> int:
    """Uniform integer timestep within the schedule's fractional range."""
    T = schedule.num_steps
    lo = max(1, math.ceil(schedule.t_range[0] * T))
    hi = min(T, math.floor(schedule.t_range[1] * T))
    return int(rng.integers(lo, hi + 1))


def forward_noise(schedule: DiffusionSchedule, x0: np.ndarray, t: int, epsilon: np.ndarray) -> np.ndarray:
    """Closed-form forward noising: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if epsilon.shape != x0.shape:
        raise ValueError(f"epsilon shape {epsilon.shape} does not match x0 {x0.shape}")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * epsilon


def effective_noise_std(weights: NoiseWeights, sigma_v: float, sigma_a: float) -> float:
    """Standard deviation of the collapsed avatar-aware noise."""
    if sigma_v < 0 or sigma_a < 0:
        raise ValueError("sigmas must be non-negative")
    return math.sqrt(
        weights.lambda_n**2 + (weights.lambda_v * sigma_v) ** 2 + (weights.lambda_a * sigma_a) ** 2
    )


def compose_avatar_noise(
    weights: NoiseWeights,
    sigma_v: float,
    sigma_a: float,
    rng: np.random.Generator,
    shape: tuple[int, ...],
) -> tuple[np.ndarray, float]:
    """Draw the collapsed avatar-aware noise field.

    The three independent components sum to a single Gaussian whose std is
    sqrt(lambda_n^2 + (lambda_v sigma_v)^2 + (lambda_a sigma_a)^2), so one
    standard-normal field is drawn and scaled.
    """
    eff = effective_noise_std(weights, sigma_v, sigma_a)
    return eff * rng.standard_normal(shape), eff


# ---------------------------------------------------------------------------
# Gradient estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GuidanceInfo:
    """Per-call bookkeeping for logging: which t, noise scale, weighting."""

    t: int
    effective_std: float
    omega: float


def _predict_checked(oracle: GuidanceOracle, z_t, t, condition) -> np.ndarray:
    try:
        pred = oracle.predict(z_t, t, condition)
    except GuidanceError:
        raise
    except Exception as exc:  # surface oracle bugs with context, keep retriable transport errors typed
        raise GuidanceError(f"oracle.predict failed at t={t}: {exc}") from exc
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != z_t.shape:
        raise GuidanceError(f"oracle returned shape {pred.shape}, expected {z_t.shape}")
    if not np.isfinite(pred).all():
        raise GuidanceError(f"oracle returned non-finite values at t={t}")
    return pred


def _distill(
    schedule: DiffusionSchedule,
    oracle: GuidanceOracle,
    x0: np.ndarray,
    condition: GuidanceCondition,
    rng: np.random.Generator,
    weights: NoiseWeights | None,
    sigma_v: float,
    sigma_a: float,
) -> tuple[np.ndarray, GuidanceInfo]:
    x0 = np.asarray(x0, dtype=np.float64)
    t = sample_timestep(schedule, rng)
    if weights is None:
        eps = rng.standard_normal(x0.shape)
        eff = 1.0
    else:
        eps, eff = compose_avatar_noise(weights, sigma_v, sigma_a, rng, x0.shape)
    z_t = forward_noise(schedule, x0, t, eps)
    pred = _predict_checked(oracle, z_t, t, condition)
    w = schedule.omega_at(t)
    return w * (pred - eps), GuidanceInfo(t=t, effective_std=eff, omega=w)


def sds_gradient(
    schedule: DiffusionSchedule,
    oracle: GuidanceOracle,
    x0: np.ndarray,
    condition: GuidanceCondition,
    rng: np.random.Generator,
) -> np.ndarray:
    """Single-sample score-distillation pixel gradient with unit Gaussian noise."""
    grad, _ = _distill(schedule, oracle, x0, condition, rng, None, 0.0, 0.0)
    return grad


def asds_gradient(
    schedule: DiffusionSchedule,
    oracle: GuidanceOracle,
    x0: np.ndarray,
    condition: GuidanceCondition,
    weights: NoiseWeights,
    sigma_v: float,
    sigma_a: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Avatar-aware variant: the injected noise variance tracks the avatar's sigmas."""
    grad, _ = _distill(schedule, oracle, x0, condition, rng, weights, sigma_v, sigma_a)
    return grad


def asds_gradient_info(
    schedule: DiffusionSchedule,
    oracle: GuidanceOracle,
    x0: np.ndarray,
    condition: GuidanceCondition,
    weights: NoiseWeights,
    sigma_v: float,
    sigma_a: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, GuidanceInfo]:
    """asds_gradient plus the drawn timestep and noise scale, for logging."""
    return _distill(schedule, oracle, x0, condition, rng, weights, sigma_v, sigma_a)
