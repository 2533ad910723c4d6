"""Purification defense: a symmetric convolutional autoencoder.

Encoder downsamples 28 -> 14 -> 7 with stride-2 convs; decoder mirrors with
transposed convs and a final sigmoid.  Training synthesizes adversarial
inputs on the fly against a frozen classifier and regresses reconstructions
onto the clean originals (MSE), with Gaussian noise injected into the latent
during training only.  No skip connections: everything an attacker writes
into the image must pass through the bottleneck.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import attacks as A
from . import autograd as ag
from . import checkpoint as ckpt
from . import data as D
from . import layers as L
from .classifier import TrainReport
from .optim import MomentumSGD

_CHUNK = 512


def _ae_layers(bottleneck_channels: int) -> tuple:
    cb = bottleneck_channels
    encoder = (L.Conv(1, 16, stride=2), L.Gelu(), L.Conv(16, cb, stride=2), L.Gelu())
    decoder = (L.TConv(cb, 16), L.Gelu(), L.TConv(16, 1), L.Sigmoid())
    return encoder + decoder


_N_ENCODER_PARAMS = 4  # two conv layers, weight+bias each


@dataclass
class AutoencoderModel:
    layers: tuple
    params: list
    seed: int
    bottleneck_channels: int
    meta: dict = field(default_factory=dict)

    @property
    def encoder_layers(self):
        return self.layers[:4]

    @property
    def decoder_layers(self):
        return self.layers[4:]

    @property
    def encoder_params(self):
        return self.params[:_N_ENCODER_PARAMS]

    @property
    def decoder_params(self):
        return self.params[_N_ENCODER_PARAMS:]


@dataclass
class DefenseTrainConfig:
    """attack may be one recipe, a list of recipes cycled per batch, or None."""

    attack: A.AttackConfig | list | None = None
    sigma: float = 0.1
    epochs: int = 10
    lr: float = 0.05
    batch_size: int = 64
    seed: int = 0
    clean_mix: float = 0.25

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.clean_mix <= 1.0:
            raise ValueError("clean_mix must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if isinstance(self.attack, list) and not self.attack:
            raise ValueError("attack recipe list must not be empty")

    @property
    def recipes(self) -> list:
        if self.attack is None:
            return []
        return self.attack if isinstance(self.attack, list) else [self.attack]


def default_recipe() -> A.AttackConfig:
    return A.AttackConfig("fgsm", 0.60)


def init_autoencoder(seed: int, bottleneck_channels: int = 32) -> AutoencoderModel:
    if bottleneck_channels < 1:
        raise ValueError("bottleneck_channels must be >= 1")
    stack = _ae_layers(bottleneck_channels)
    return AutoencoderModel(stack, L.init_params(stack, seed), seed, bottleneck_channels)


def _chunked_forward(layer_stack, params, x: np.ndarray) -> np.ndarray:
    outs = []
    for s in range(0, x.shape[0], _CHUNK):
        t = ag.Tensor(x[s:s + _CHUNK])
        outs.append(L.forward(layer_stack, [ag.Tensor(p) for p in params], t).data)
    return np.concatenate(outs) if outs else x[:0]


def encode(model: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    """Deterministic encoder half; latent is C_b x 7 x 7 for 28 x 28 input."""
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected N x 1 x H x W images, got {x.shape}")
    return _chunked_forward(model.encoder_layers, model.encoder_params, x)


def decode(model: AutoencoderModel, z: np.ndarray) -> np.ndarray:
    """Decoder half; final sigmoid keeps pixels in (0, 1)."""
    if z.ndim != 4 or z.shape[1] != model.bottleneck_channels:
        raise ValueError(f"latent must be N x {model.bottleneck_channels} x h x w, got {z.shape}")
    return _chunked_forward(model.decoder_layers, model.decoder_params, z)


def purify(model: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    """Inference-mode reconstruction: decode(encode(x)), no latent noise."""
    return decode(model, encode(model, x))


def reconstruction_mse(model: AutoencoderModel, x: np.ndarray, target=None) -> float:
    target = x if target is None else target
    diff = purify(model, x).astype(np.float64) - target.astype(np.float64)
    return float(np.mean(diff ** 2))


def train_defense(ae: AutoencoderModel, classifier_model, clean: D.Dataset,
                  cfg: DefenseTrainConfig) -> tuple:
    """MSE training on (attacked image -> clean image) pairs.

    Each batch attacks the frozen classifier with cfg.attack to synthesize
    the input; a cfg.clean_mix fraction of batches trains on the identity
    mapping instead.  Latent noise N(0, sigma^2) is train-time only.
    """
    t0 = time.perf_counter()
    report = TrainReport()
    flat = L.flatten_params(ae.params)
    views = L.param_views(ae.layers, flat)
    opt = MomentumSGD(lr=cfg.lr, momentum=0.9)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(cfg.seed))))
    n_enc = _N_ENCODER_PARAMS
    recipes = cfg.recipes
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for xb, yb in D.batches(clean, cfg.batch_size, shuffle_seed=cfg.seed * 31 + epoch):
            use_clean = not recipes or rng.random() < cfg.clean_mix
            if use_clean:
                x_in = xb
            else:
                recipe = recipes[step % len(recipes)]
                atk = replace(recipe, seed=recipe.seed + step)
                x_in = A.run_attack(classifier_model, xb, yb, atk).x_adv
            pts = [ag.Tensor(p, requires_grad=True) for p in views]
            z = L.forward(ae.layers[:4], pts[:n_enc], ag.Tensor(x_in))
            if cfg.sigma > 0:
                noise = rng.normal(0.0, cfg.sigma, size=z.data.shape).astype(z.data.dtype)
                z = ag.add(z, ag.Tensor(noise))
            x_rec = L.forward(ae.layers[4:], pts[n_enc:], z)
            loss = ag.mse(x_rec, ag.Tensor(xb))
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"defense training diverged: non-finite mse at epoch {epoch}, "
                    f"step {step} (lr={cfg.lr})")
            loss.backward()
            grads = np.concatenate([t.grad.ravel() for t in pts])
            opt.step(flat, grads)
            losses.append(value)
            step += 1
        report.epoch_losses.append(float(np.mean(losses)))
    report.seconds = time.perf_counter() - t0
    trained = AutoencoderModel(ae.layers, [v.copy() for v in views], ae.seed,
                               ae.bottleneck_channels,
                               dict(ae.meta, recipe=[vars(r).copy() for r in recipes] or None,
                                    sigma=cfg.sigma, epochs=cfg.epochs, lr=cfg.lr))
    return trained, report


def save_autoencoder(path, model: AutoencoderModel) -> None:
    meta = dict(model.meta, bottleneck_channels=model.bottleneck_channels)
    ckpt.save_checkpoint(path, "autoencoder", model.layers, model.params,
                         model.seed, meta)


def load_autoencoder(path) -> AutoencoderModel:
    stack, params, header = ckpt.load_checkpoint(path, expect_kind="autoencoder")
    meta = header.get("meta", {})
    cb = meta.get("bottleneck_channels", 32)
    return AutoencoderModel(stack, params, header["seed"], cb, meta)
