"""Guided-diffusion training objective and ancestral sampler.

Training, per example: encode the history into guidance c; with probability
p_uncond replace c by the learned dummy guidance; draw a uniform step t and
Gaussian noise, corrupt the target embedding with the closed-form forward
process, and penalize the squared distance between the target embedding and
the denoiser output. The default loss is the unweighted per-example squared
error (batch mean); the variance-ratio weighting is available behind
`weighted_loss` for study.

Sampling: start from a standard Gaussian, encode the guidance once, then walk
t = T..1 combining the conditional and unconditional predictions with
strength w and stepping through the posterior mean, adding posterior noise
except at the final step.

Randomness is per-example and counter-based: draws are keyed by
(seed, purpose, epoch, example uid), never by batch position, so batching
and processing order cannot change results. `training_loss` additionally
canonicalizes the batch to ascending uid order internally, which makes it
exactly permutation-invariant over batch order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ContractViolation
from .model import GenerativeRecommender
from .schedule import Schedule, posterior_mean, q_sample
from .tensor import Tensor, mul, no_grad, tmean, tsum


@dataclass
class DiffusionConfig:
    p_uncond: float = 0.1
    guidance_strength: float = 0.0
    weighted_loss: bool = False

    def validate(self) -> None:
        if not (0.0 <= self.p_uncond <= 1.0):
            raise ContractViolation("p_uncond must lie in [0, 1]")
        if self.guidance_strength < 0.0:
            raise ContractViolation("guidance_strength must be >= 0")


def training_loss(batch, model: GenerativeRecommender, sched: Schedule,
                  cfg: DiffusionConfig, *, seed: int, epoch: int = 0) -> Tensor:
    """Scalar training loss for a batch of SequenceExamples."""
    cfg.validate()
    if not batch:
        raise ContractViolation("training_loss requires a nonempty batch")
    batch = sorted(batch, key=lambda ex: ex.uid)
    B = len(batch)
    d = model.cfg.embedding_dim
    T = sched.total_steps

    histories = np.stack([np.asarray(ex.history, dtype=np.int64) for ex in batch])
    targets = np.asarray([ex.target for ex in batch], dtype=np.int64)

    t = np.empty(B, dtype=np.int64)
    eps = np.empty((B, d), dtype=model.dtype)
    drop = np.empty(B, dtype=bool)
    for i, ex in enumerate(batch):
        t[i] = rng.stream(seed, rng.STEP_T, epoch, ex.uid).integers(1, T + 1)
        eps[i] = rng.stream(seed, rng.NOISE, epoch, ex.uid).standard_normal(d)
        drop[i] = rng.stream(seed, rng.DROP, epoch, ex.uid).random() < cfg.p_uncond

    c = model.encode_histories(histories)
    keep_col = (~drop).astype(model.dtype)[:, None]
    drop_col = drop.astype(model.dtype)[:, None]
    c_used = mul(c, keep_col) + mul(model.phi_rows(B), drop_col)

    e0 = model.items.lookup(targets)
    et = q_sample(e0, t, eps, sched)
    pred = model.denoise(et, c_used, t)
    diff = e0 - pred
    per_example = tsum(diff * diff, axis=1)
    if cfg.weighted_loss:
        # The t=1 ratio is singular (zero posterior variance); fall back to 1.
        w = np.ones(B, dtype=np.float64)
        gt1 = t > 1
        w[gt1] = sched.alpha_bar[t[gt1] - 1] / (2.0 * sched.beta_tilde[t[gt1]])
        per_example = mul(per_example, w.astype(model.dtype))
    return tmean(per_example)


def cfg_combine(cond, uncond, w: float):
    """(1 + w) * cond - w * uncond; returns cond untouched at w == 0."""
    if w < 0:
        raise ContractViolation("guidance strength must be >= 0")
    if w == 0:
        return cond
    return (1.0 + w) * cond - w * uncond


def p_sample_step(xt: np.ndarray, t: int, c, w: float, z, model: GenerativeRecommender,
                  sched: Schedule) -> np.ndarray:
    """One reverse step: posterior mean around the guided prediction plus noise."""
    if not (1 <= t <= sched.total_steps):
        raise ContractViolation(f"step index out of range [1, {sched.total_steps}]")
    z = np.asarray(z, dtype=xt.dtype)
    if t == 1 and np.any(z != 0):
        raise ContractViolation("z must be 0 at the final step (t = 1)")
    with no_grad():
        f_cond = model.denoise(xt, c, t).data
        if w == 0:
            f_tilde = f_cond
        else:
            phi = model.encoder.phi.data
            if xt.ndim > 1:
                phi = np.broadcast_to(phi, f_cond.shape)
            f_uncond = model.denoise(xt, phi, t).data
            f_tilde = cfg_combine(f_cond, f_uncond, w)
    if t == 1:
        # Posterior coefficients collapse to (1, 0) and the variance to 0.
        return f_tilde
    mean = posterior_mean(f_tilde, xt, t, sched)
    sigma = np.asarray(np.sqrt(sched.beta_tilde[t]), dtype=xt.dtype)
    return mean + sigma * z


def generate(history_ids, model: GenerativeRecommender, sched: Schedule,
             w: float, gen: np.random.Generator) -> np.ndarray:
    """Ancestral sampling of one oracle embedding for one history window.

    The guidance is encoded exactly once; the unconditional branch shares the
    noise stream with the conditional one (it consumes no extra randomness),
    so w = 0 is bit-identical to a sampler that never evaluates that branch.
    """
    d = model.cfg.embedding_dim
    with no_grad():
        c = model.encode_histories(np.asarray(history_ids, dtype=np.int64)
                                   .reshape(1, -1)).data
    x = gen.standard_normal(d).astype(model.dtype).reshape(1, d)
    for t in range(sched.total_steps, 0, -1):
        z = gen.standard_normal(d).astype(model.dtype).reshape(1, d) if t > 1 else 0.0
        x = p_sample_step(x, t, c, w, z, model, sched)
    return x.reshape(d)


def generation_stream(seed: int, uid: int) -> np.random.Generator:
    """Noise stream for generating one example's oracle."""
    return rng.stream(seed, rng.GENERATE, uid)
