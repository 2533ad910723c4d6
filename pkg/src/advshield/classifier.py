"""The attack target: a small convolutional classifier trained from scratch.

Topology is pinned (tests depend on the exact parameter count): three conv
layers with GELU, two dense layers, 10 logits.  28x28 inputs downsample
14 -> 7 through the stride-2 convs, so the flatten feeds 32*7*7 = 1568.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt
from . import data as D
from . import layers as L
from .optim import MomentumSGD

CLASSIFIER_LAYERS = (
    L.Conv(1, 16, stride=1),
    L.Gelu(),
    L.Conv(16, 32, stride=2),
    L.Gelu(),
    L.Conv(32, 32, stride=2),
    L.Gelu(),
    L.Flatten(),
    L.Dense(32 * 7 * 7, 128),
    L.Gelu(),
    L.Dense(128, 10),
)

_PREDICT_CHUNK = 512


@dataclass
class ClassifierModel:
    layers: tuple
    params: list
    seed: int
    meta: dict = field(default_factory=dict)


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    epoch_accuracies: list = field(default_factory=list)
    seconds: float = 0.0


def init_classifier(seed: int) -> ClassifierModel:
    return ClassifierModel(CLASSIFIER_LAYERS, L.init_params(CLASSIFIER_LAYERS, seed), seed)


def logits(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    """Forward pass without gradient tracking, chunked to bound memory."""
    outs = []
    for start in range(0, images.shape[0], _PREDICT_CHUNK):
        x = ag.Tensor(images[start:start + _PREDICT_CHUNK])
        outs.append(L.forward(model.layers, [ag.Tensor(p) for p in model.params], x).data)
    return np.concatenate(outs) if outs else np.zeros((0, 10), np.float32)


def predict(model: ClassifierModel, images: np.ndarray):
    """Return (logits, argmax labels); ties resolve to the lowest class index."""
    if images.ndim != 4 or images.shape[1] != 1:
        raise ValueError(f"expected N x 1 x H x W images, got shape {images.shape}")
    z = logits(model, images)
    return z, z.argmax(axis=1)


def accuracy(model: ClassifierModel, dataset, images=None) -> float:
    """Fraction correct on a Dataset (or explicit (images, labels) pair)."""
    if images is not None:
        imgs, labels = dataset, images
    else:
        imgs, labels = dataset.images, dataset.labels
    if imgs.shape[0] == 0:
        return 0.0
    _, pred = predict(model, imgs)
    return float((pred == labels).mean())


def mean_loss(model: ClassifierModel, dataset) -> float:
    """Mean cross-entropy over a dataset, no gradients."""
    total = 0.0
    for start in range(0, dataset.n, _PREDICT_CHUNK):
        imgs = dataset.images[start:start + _PREDICT_CHUNK]
        labs = dataset.labels[start:start + _PREDICT_CHUNK]
        total += float(ag.per_image_cross_entropy(logits(model, imgs), labs).sum())
    return total / dataset.n


def train_classifier(model: ClassifierModel, train: D.Dataset, test: D.Dataset,
                     epochs: int = 5, lr: float = 0.05, batch_size: int = 64,
                     seed: int = 0) -> tuple:
    """SGD-with-momentum cross-entropy training; returns (model, TrainReport).

    Aborts with a diagnostic if the loss goes non-finite.
    """
    t0 = time.perf_counter()
    report = TrainReport()
    flat = L.flatten_params(model.params)
    views = L.param_views(model.layers, flat)
    opt = MomentumSGD(lr=lr, momentum=0.9)
    for epoch in range(epochs):
        losses = []
        for xb, yb in D.batches(train, batch_size, shuffle_seed=seed * 10007 + epoch):
            pts = [ag.Tensor(p, requires_grad=True) for p in views]
            out = L.forward(model.layers, pts, ag.Tensor(xb))
            loss = ag.softmax_cross_entropy(out, yb)
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"after {len(losses)} batches (lr={lr})")
            loss.backward()
            grads = np.concatenate([t.grad.ravel() for t in pts])
            opt.step(flat, grads)
            losses.append(value)
        trained = ClassifierModel(model.layers, views, model.seed, model.meta)
        report.epoch_losses.append(float(np.mean(losses)))
        report.epoch_accuracies.append(accuracy(trained, test))
    report.seconds = time.perf_counter() - t0
    final = ClassifierModel(model.layers, [v.copy() for v in views], model.seed,
                            dict(model.meta, epochs=epochs, lr=lr,
                                 final_accuracy=report.epoch_accuracies[-1] if epochs else None))
    return final, report


def save_classifier(path, model: ClassifierModel) -> None:
    ckpt.save_checkpoint(path, "classifier", model.layers, model.params,
                         model.seed, model.meta)


def load_classifier(path) -> ClassifierModel:
    stack, params, header = ckpt.load_checkpoint(path, expect_kind="classifier")
    return ClassifierModel(stack, params, header["seed"], header.get("meta", {}))
