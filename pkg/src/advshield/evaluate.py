"""Experiment harness: epsilon sweeps, defended-vs-attacked pairs, latency, grids.

Reports are plain dataclasses serialized to commented CSV so a run can be
inspected with standard tools and replayed from its embedded metadata.
"""

import csv
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import attacks as A
from . import autoencoder as AE
from . import classifier as C
from . import layers as L

CSV_HEADER = ("attack", "epsilon", "acc_attacked", "acc_defended",
              "linf_mean", "l2_mean", "n")

_ROUND = 6


def _r(value: float) -> float:
    """Round to report precision so rows survive a CSV round trip unchanged."""
    return round(float(value), _ROUND)


@dataclass
class EvalRow:
    attack: str
    epsilon: float
    acc_attacked: float
    acc_defended: Optional[float]
    linf_mean: float
    l2_mean: float
    n: int

    def __post_init__(self):
        if not 0.0 <= self.acc_attacked <= 1.0:
            raise ValueError("acc_attacked outside [0, 1]")
        if self.acc_defended is not None and not 0.0 <= self.acc_defended <= 1.0:
            raise ValueError("acc_defended outside [0, 1]")
        if self.epsilon < 0 or self.linf_mean < 0 or self.l2_mean < 0:
            raise ValueError("epsilon and perturbation norms must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass
class EvalReport:
    """Rows sorted by epsilon plus enough metadata to replay the run."""

    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        eps = [row.epsilon for row in self.rows]
        if eps != sorted(eps):
            raise ValueError("rows must be sorted by epsilon ascending")


@dataclass
class LatencyReport:
    batch_size: int
    warmup: int
    trials: int
    median_s: float
    mean_s: float
    p95_s: float

    def __post_init__(self):
        if min(self.median_s, self.mean_s, self.p95_s) <= 0:
            raise ValueError("latencies must be positive")
        if self.median_s > self.p95_s + 1e-12:
            raise ValueError("median latency cannot exceed p95")


def _base_metadata(model, dataset_name, seed):
    return {
        "dataset": dataset_name,
        "classifier_sha256": L.topology_hash(model.layers),
        "seed": str(seed),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def epsilon_sweep(model, kind: str, eps_list, dataset, *, alpha: float = 0.015,
                  steps: int = 40, restarts: int = 1, seed: int = 0,
                  dataset_name: str = "unnamed") -> EvalReport:
    """Attack the full set once per epsilon and record attacked accuracy.

    The epsilon grid is sorted ascending; each point draws its random stream
    from (seed, grid index) so points are independent and replayable. The
    epsilon=0 row is the clean accuracy, exactly.
    """
    if not len(eps_list):
        raise ValueError("eps_list must be non-empty")
    images, labels = dataset.images, dataset.labels
    n = int(images.shape[0])
    clean_acc = C.accuracy(model, images, labels)
    rows = []
    for idx, eps in enumerate(sorted(float(e) for e in eps_list)):
        if eps == 0.0:
            rows.append(EvalRow(kind, 0.0, clean_acc, None, 0.0, 0.0, n))
            continue
        point_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
        cfg = _sweep_config(kind, eps, alpha, steps, restarts, point_seed)
        batch = A.run_attack(model, images, labels, cfg)
        acc = C.accuracy(model, batch.x_adv, labels)
        rows.append(EvalRow(kind, eps, _r(acc), None,
                            _r(batch.linf.mean()), _r(batch.l2.mean()), n))
    meta = _base_metadata(model, dataset_name, seed)
    meta.update(attack=kind, alpha=repr(alpha), steps=str(steps), restarts=str(restarts))
    return EvalReport(rows, meta)


def _sweep_config(kind, eps, alpha, steps, restarts, point_seed):
    if kind == "fgsm":
        return A.AttackConfig("fgsm", eps)
    return A.AttackConfig(kind, eps, alpha=alpha, steps=steps,
                          restarts=restarts, seed=point_seed)


def _purify_fn(defense):
    """Accept an autoencoder model, a raw callable, or None (identity)."""
    if defense is None:
        return lambda x: x
    if callable(defense) and not isinstance(defense, AE.AutoencoderModel):
        return defense
    return lambda x: AE.purify(defense, x)


def defended_accuracy(model, defense, cfg: A.AttackConfig, dataset, *,
                      dataset_name: str = "unnamed") -> EvalReport:
    """Single-row report pairing attacked and purified-then-classified accuracy.

    The adversarial batch is computed once and shared by both measurements so
    the comparison is not confounded by attack randomness.
    """
    images, labels = dataset.images, dataset.labels
    batch = A.run_attack(model, images, labels, cfg)
    acc_attacked = C.accuracy(model, batch.x_adv, labels)
    purified = _purify_fn(defense)(batch.x_adv)
    acc_defended = C.accuracy(model, purified, labels)
    row = EvalRow(cfg.kind, float(cfg.epsilon), _r(acc_attacked), _r(acc_defended),
                  _r(batch.linf.mean()), _r(batch.l2.mean()), int(images.shape[0]))
    meta = _base_metadata(model, dataset_name, cfg.seed)
    if isinstance(defense, AE.AutoencoderModel):
        meta["defense_sha256"] = L.topology_hash(defense.layers)
    meta.update(attack=cfg.kind, alpha=repr(cfg.alpha), steps=str(cfg.steps),
                restarts=str(cfg.restarts))
    return EvalReport([row], meta)


def measure_latency(defense, model, batch: np.ndarray, *, warmup: int = 2,
                    trials: int = 5) -> LatencyReport:
    """Median / mean / p95 wall seconds per image for purify + classify."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if batch.shape[0] < 1:
        raise ValueError("batch must contain at least one image")
    purify = _purify_fn(defense)
    per_image = []
    for trial in range(warmup + trials):
        start = time.perf_counter()
        C.predict(model, purify(batch))
        elapsed = time.perf_counter() - start
        if trial >= warmup:
            per_image.append(elapsed / batch.shape[0])
    times = np.asarray(per_image, dtype=np.float64)
    return LatencyReport(int(batch.shape[0]), warmup, trials,
                         float(np.median(times)), float(times.mean()),
                         float(np.percentile(times, 95)))


def render_grid(images: np.ndarray, rows: int, cols: int, path) -> None:
    """Tile images into a binary PGM (P5) with 1-pixel white separators."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 4:
        images = images[:, 0]
    if images.ndim != 3:
        raise ValueError("expected images shaped [n, h, w] or [n, 1, h, w]")
    count, h, w = images.shape
    if rows * cols < count:
        raise ValueError("grid too small for image count")
    height = rows * h + (rows - 1)
    width = cols * w + (cols - 1)
    canvas = np.full((height, width), 255, dtype=np.uint8)
    for i in range(rows * cols):
        r, c = divmod(i, cols)
        top, left = r * (h + 1), c * (w + 1)
        if i < count:
            tile = np.floor(np.clip(images[i], 0.0, 1.0) * 255.0 + 0.5)
            canvas[top:top + h, left:left + w] = tile.astype(np.uint8)
        else:
            canvas[top:top + h, left:left + w] = 0
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(canvas.tobytes())


def write_report_csv(report: EvalReport, path) -> None:
    """Emit metadata as '#' comments, then the fixed header, then rows.

    Floats use '.' decimals at six places; a missing defended accuracy is an
    empty field.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        for key in sorted(report.metadata):
            f.write(f"# {key}={report.metadata[key]}\n")
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for row in report.rows:
            defended = "" if row.acc_defended is None else f"{row.acc_defended:.6f}"
            writer.writerow([row.attack, f"{row.epsilon:.6f}",
                             f"{row.acc_attacked:.6f}", defended,
                             f"{row.linf_mean:.6f}", f"{row.l2_mean:.6f}",
                             str(row.n)])


def read_report_csv(path) -> EvalReport:
    """Parse a file produced by write_report_csv back into an EvalReport."""
    metadata, rows = {}, []
    with open(path, newline="") as f:
        lines = [ln for ln in f]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, value = ln[1:].strip().partition("=")
            metadata[key] = value
        else:
            body.append(ln)
    reader = csv.reader(body)
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected report header {header!r}")
    for rec in reader:
        if not rec:
            continue
        rows.append(EvalRow(rec[0], float(rec[1]), float(rec[2]),
                            None if rec[3] == "" else float(rec[3]),
                            float(rec[4]), float(rec[5]), int(rec[6])))
    return EvalReport(rows, metadata)


def write_latency_csv(report: LatencyReport, path, metadata=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        for key in sorted(metadata or {}):
            f.write(f"# {key}={metadata[key]}\n")
        writer = csv.writer(f)
        writer.writerow(("batch_size", "warmup", "trials",
                         "median_s", "mean_s", "p95_s"))
        writer.writerow([report.batch_size, report.warmup, report.trials,
                         f"{report.median_s:.6f}", f"{report.mean_s:.6f}",
                         f"{report.p95_s:.6f}"])
