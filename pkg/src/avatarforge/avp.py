"""Adaptive variational parameters.

The trainable avatar parameters (vertex offsets and albedo map) are
treated as the means of Gaussian distributions whose per-block standard
deviation equals the blocks' own standard deviation.  Training draws
perturbed samples; inference uses the means.  Both sigmas are exactly
zero at initialization, so the first iterations are perturbation-free and
difficulty ramps up as the parameters spread out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class AvatarParams:
    """Trainable means: vertex offsets and albedo map.

    Single-writer: only the optimizer mutates these arrays, and sampling
    happens on the writer thread.  Snapshots handed to readers are copies.
    """

    psi_v: np.ndarray  # (N, 3), zero-initialized
    psi_a: np.ndarray  # (H_a, W_a, 3), 0.5-initialized; clamped only at export
    rng_seed: int = 0

    def __post_init__(self):
        self.psi_v = np.asarray(self.psi_v, dtype=np.float64)
        self.psi_a = np.asarray(self.psi_a, dtype=np.float64)
        if not np.isfinite(self.psi_v).all():
            raise ValidationError("psi_v contains non-finite values")
        if not np.isfinite(self.psi_a).all():
            raise ValidationError("psi_a contains non-finite values")

    @classmethod
    def initialize(cls, num_vertices: int, albedo_resolution: tuple[int, int], rng_seed: int = 0) -> "AvatarParams":
        w, h = albedo_resolution
        return cls(
            psi_v=np.zeros((num_vertices, 3)),
            psi_a=np.full((h, w, 3), 0.5),
            rng_seed=rng_seed,
        )


@dataclass
class PerturbedSample:
    """One draw from the avatar distribution, with the sigmas used."""

    psi_v_sample: np.ndarray
    psi_a_sample: np.ndarray
    sigma_v: float
    sigma_a: float


def sigma(params_block: np.ndarray) -> float:
    """Population standard deviation over all scalar entries of a block."""
    block = np.asarray(params_block)
    if block.size == 0:
        raise ValueError("parameter block is empty")
    return float(np.std(block))


def sample_perturbed(params: AvatarParams, rng: np.random.Generator) -> PerturbedSample:
    """Draw perturbed parameters around the means.

    psi_v' = psi_v + sigma(psi_v) * eps, psi_a' = clamp(psi_a +
    sigma(psi_a) * eps, 0, 1).  The sigma * eps term is a constant of the
    iteration: downstream gradients flow to the means with an identity
    Jacobian (reparameterized sampling, straight through the clamp).
    Never mutates the means.  Consumes one standard-normal field per block.
    """
    sigma_v = sigma(params.psi_v)
    sigma_a = sigma(params.psi_a)
    psi_v_sample = params.psi_v + sigma_v * rng.standard_normal(params.psi_v.shape)
    psi_a_sample = np.clip(params.psi_a + sigma_a * rng.standard_normal(params.psi_a.shape), 0.0, 1.0)
    return PerturbedSample(
        psi_v_sample=psi_v_sample,
        psi_a_sample=psi_a_sample,
        sigma_v=sigma_v,
        sigma_a=sigma_a,
    )


def inference_params(params: AvatarParams) -> tuple[np.ndarray, np.ndarray]:
    """The stored means, unperturbed (copies, safe to share across threads)."""
    return params.psi_v.copy(), params.psi_a.copy()
