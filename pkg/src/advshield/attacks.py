"""White-box untargeted attacks under an L-infinity budget: FGSM, BIM, PGD.

All three ascend the cross-entropy of the true label and clip back into the
epsilon-ball around the original image intersected with the pixel box.  BIM
with one step and alpha = epsilon collapses to FGSM, and PGD with one restart
and zero start noise collapses to BIM; both collapses are bitwise and the
implementations share one ascent routine so that stays true by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import data as D
from . import layers as L

_GRAD_CHUNK = 256


@dataclass
class AttackConfig:
    kind: str
    epsilon: float
    alpha: float = 0.0
    steps: int = 1
    restarts: int = 1
    seed: int = 0
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fgsm", "bim", "pgd"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.kind in ("bim", "pgd"):
            if self.alpha <= 0:
                raise ValueError(f"{self.kind} needs alpha > 0")
            if self.steps < 1:
                raise ValueError(f"{self.kind} needs steps >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.clip_lo > self.clip_hi:
            raise ValueError("clip_lo must not exceed clip_hi")


@dataclass
class AdversarialBatch:
    x_adv: np.ndarray
    x_orig: np.ndarray
    linf: np.ndarray
    l2: np.ndarray
    fooled: np.ndarray
    config: AttackConfig

    def __post_init__(self):
        eps = self.config.epsilon
        if self.linf.size and self.linf.max() > eps + 1e-6:
            raise ValueError(f"perturbation L-inf {self.linf.max()} exceeds budget {eps}")
        if self.x_adv.size and (self.x_adv.min() < self.config.clip_lo
                                or self.x_adv.max() > self.config.clip_hi):
            raise ValueError("adversarial pixels left the clip box")


def project_linf(x_cand, x_orig, epsilon, lo=0.0, hi=1.0):
    """Clip into the epsilon-ball around x_orig intersected with [lo, hi]."""
    if x_cand.shape != x_orig.shape:
        raise ValueError(f"shape mismatch: {x_cand.shape} vs {x_orig.shape}")
    lower = np.maximum(x_orig - x_orig.dtype.type(epsilon), x_orig.dtype.type(lo))
    upper = np.minimum(x_orig + x_orig.dtype.type(epsilon), x_orig.dtype.type(hi))
    return np.clip(x_cand, lower, upper)


def perturbation_stats(x, x_adv):
    """Per-image L-inf and L2 norms of (x_adv - x), computed in float64."""
    if x.shape != x_adv.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_adv.shape}")
    delta = (x_adv.astype(np.float64) - x.astype(np.float64)).reshape(x.shape[0], -1)
    return np.abs(delta).max(axis=1), np.sqrt((delta ** 2).sum(axis=1))


def _ce_loss_fn(layer_stack):
    def fn(param_ts, x_t, y):
        return ag.softmax_cross_entropy(L.forward(layer_stack, param_ts, x_t), y)
    return fn


def _input_grad(model, x, y):
    """d(mean CE)/dx, chunked; per-image gradient signs are chunk-invariant."""
    loss_fn = _ce_loss_fn(model.layers)
    grads = np.empty_like(x)
    for s in range(0, x.shape[0], _GRAD_CHUNK):
        res = ag.loss_and_input_grad(loss_fn, model.params, x[s:s + _GRAD_CHUNK],
                                     y[s:s + _GRAD_CHUNK])
        grads[s:s + _GRAD_CHUNK] = res.grad_input
    return grads


def _per_image_loss(model, x, y):
    from .classifier import logits
    return ag.per_image_cross_entropy(logits(model, x), y)


def _check_inputs(model, x, y):
    if x.ndim != 4:
        raise ValueError(f"expected rank-4 image batch, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError(f"{x.shape[0]} images but labels shaped {y.shape}")


def _ascend(model, x_start, x_orig, y, cfg: AttackConfig):
    """The shared BIM iteration from an arbitrary start point."""
    alpha = x_orig.dtype.type(cfg.alpha)
    x_cur = x_start
    for _ in range(cfg.steps):
        g = _input_grad(model, x_cur, y)
        x_cur = project_linf(x_cur + alpha * np.sign(g), x_orig,
                             cfg.epsilon, cfg.clip_lo, cfg.clip_hi)
    return x_cur


def _finish(model, x, y, x_adv, cfg) -> AdversarialBatch:
    from .classifier import predict
    linf, l2 = perturbation_stats(x, x_adv)
    _, pred = predict(model, x_adv)
    return AdversarialBatch(x_adv=x_adv, x_orig=x, linf=linf, l2=l2,
                            fooled=pred != y, config=cfg)


def fgsm(model, x, y, epsilon: float, clip_lo=0.0, clip_hi=1.0) -> AdversarialBatch:
    """Single-step attack: x + epsilon * sign(grad), clipped to the pixel box."""
    _check_inputs(model, x, y)
    cfg = AttackConfig("fgsm", epsilon, clip_lo=clip_lo, clip_hi=clip_hi)
    g = _input_grad(model, x, y)
    x_adv = np.clip(x + x.dtype.type(epsilon) * np.sign(g), clip_lo, clip_hi)
    return _finish(model, x, y, x_adv, cfg)


def bim(model, x, y, cfg: AttackConfig) -> AdversarialBatch:
    """Iterated FGSM with per-step projection into the ball."""
    if cfg.kind != "bim":
        raise ValueError(f"bim() called with kind {cfg.kind!r}")
    _check_inputs(model, x, y)
    return _finish(model, x, y, _ascend(model, x, x, y, cfg), cfg)


def pgd(model, x, y, cfg: AttackConfig, zero_init: bool = False) -> AdversarialBatch:
    """BIM from a random start; multiple restarts keep the worst case per image.

    zero_init is a test hook that replaces the start noise with zeros, which
    makes one restart coincide with plain BIM.
    """
    if cfg.kind != "pgd":
        raise ValueError(f"pgd() called with kind {cfg.kind!r}")
    _check_inputs(model, x, y)
    best_x = None
    best_loss = None
    for r in range(cfg.restarts):
        if zero_init:
            start = x
        else:
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([int(cfg.seed), r])))
            noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(x.dtype)
            start = np.clip(x + noise, cfg.clip_lo, cfg.clip_hi)
        cand = _ascend(model, start, x, y, cfg)
        loss = _per_image_loss(model, cand, y)
        if best_x is None:
            best_x, best_loss = cand, loss
        else:
            better = loss > best_loss  # strict: ties keep the earliest restart
            best_x = np.where(better[:, None, None, None], cand, best_x)
            best_loss = np.where(better, loss, best_loss)
    return _finish(model, x, y, best_x, cfg)


def run_attack(model, x, y, cfg: AttackConfig) -> AdversarialBatch:
    """Dispatch on cfg.kind."""
    if cfg.kind == "fgsm":
        return fgsm(model, x, y, cfg.epsilon, cfg.clip_lo, cfg.clip_hi)
    if cfg.kind == "bim":
        return bim(model, x, y, cfg)
    return pgd(model, x, y, cfg)


def save_adversarial(out_dir, batch: AdversarialBatch, labels) -> dict:
    """Persist x_adv as IDX plus a JSON sidecar describing the attack."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    img_path = out / "adversarial-images-idx3-ubyte.gz"
    lab_path = out / "adversarial-labels-idx1-ubyte.gz"
    D.save_idx_images(img_path, batch.x_adv)
    D.save_idx_labels(lab_path, labels)
    sidecar = {
        "attack": asdict(batch.config),
        "n_images": int(batch.x_adv.shape[0]),
        "linf_mean": float(batch.linf.mean()) if batch.linf.size else 0.0,
        "l2_mean": float(batch.l2.mean()) if batch.l2.size else 0.0,
        "fooled_fraction": float(batch.fooled.mean()) if batch.fooled.size else 0.0,
        "images": img_path.name,
        "labels": lab_path.name,
    }
    with open(out / "attack-metadata.json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    return sidecar
