"""Two-phase training: supervised pre-training, then size-supervised fine-tuning.

Pre-training minimises BCE-with-logits on the fully annotated subset with
random flips. Fine-tuning sees only (image, size) pairs: logits are mapped to
Bernoulli probabilities, the flip estimator supplies a per-pixel gradient of
the expected size loss, which is chained to the logits and injected into
backpropagation. Both phases stop early on validation E and return the best
checkpoint seen.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import DatasetSplit, MaskedSample, SizedSample, augment_flip, derive_size
from .estimator import EstimatorConfig, chain_to_logits, sample_grad_and_loss
from .grid import iou, size_error, threshold
from .network import (Architecture, NetworkParams, OptimizerState, bce_loss_and_grads, bce_with_logits,
                      forward, init_params, record, sgd_step)
from .sizefn import object_size
from .stochastic import NoiseSpec, prob_map

METRICS_HEADER = ("epoch", "phase", "train_loss", "val_E", "val_IoU", "duration_s")
_PHASE_KEY = {"pretrain": 1, "finetune": 2, "bench": 3}


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    lr_pretrain: float = 1e-2
    lr_finetune: float = 1e-3
    momentum: float = 0.9
    n_samples: int = 1
    max_epochs: int = 100
    patience: int = 10
    pretrain_max_epochs: Optional[int] = None  # defaults to max_epochs
    pretrain_patience: Optional[int] = None  # defaults to patience
    pretrain_monitor: str = "E"  # validation quantity for pre-training early stopping: "bce" or "E"
    m_full: int = 85
    use_fast_flip_table: bool = True
    mix_full_loss: bool = False
    depth: int = 2
    base_channels: int = 8
    workers: int = 1
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        for name in ("batch_size", "n_samples", "max_epochs", "patience", "m_full", "workers",
                     "base_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.pretrain_monitor not in ("bce", "E"):
            raise ValueError("pretrain_monitor must be 'bce' or 'E'")

    @property
    def arch(self) -> Architecture:
        return Architecture(self.depth, self.base_channels)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    val_E: float
    val_IoU: float
    duration_s: float


@dataclass
class EvalResult:
    mean_E: float
    mean_IoU: float
    rows: list[dict]


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent, reproducible Philox substream addressed by integer keys."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=keys)))


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def evaluate(params: NetworkParams, samples: Sequence[MaskedSample], batch_size: int = 64) -> EvalResult:
    """Hard-threshold predictions (tie -> foreground) and score E and IoU per sample."""
    rows = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        logits = forward(params, np.stack([s.image for s in chunk]))
        for s, a in zip(chunk, logits):
            pred = threshold(a)
            gt_size = object_size(s.mask)
            pred_size = object_size(pred)
            rows.append({"uid": s.uid, "gt_size": gt_size, "pred_size": pred_size,
                         "E": size_error(gt_size, pred_size), "IoU": iou(s.mask, pred)})
    if not rows:
        return EvalResult(float("nan"), float("nan"), rows)
    return EvalResult(float(np.mean([r["E"] for r in rows])),
                      float(np.mean([r["IoU"] for r in rows])), rows)


# --- single epochs ---------------------------------------------------------

def supervised_epoch(params, state, samples: Sequence[MaskedSample], batch_size: int,
                     rng: np.random.Generator, augment: bool = True):
    """One pass of mean-per-pixel BCE over ``samples``; returns (params, state, mean loss)."""
    losses = []
    for idx in _batches(len(samples), batch_size, rng):
        batch = [samples[i] for i in idx]
        if augment:
            batch = [augment_flip(s, rng) for s in batch]
        images = np.stack([s.image for s in batch])
        masks = np.stack([s.mask for s in batch])
        loss, grads = bce_loss_and_grads(params, images, masks)
        scale = 1.0 / masks.size
        params, state = sgd_step(params, {k: g * scale for k, g in grads.items()}, state)
        losses.append(loss * scale)
    return params, state, float(np.mean(losses))


def weak_epoch(params, state, samples: Sequence[SizedSample], config: TrainConfig,
               seed_keys: tuple, noise: NoiseSpec = NoiseSpec(),
               full: Sequence[MaskedSample] = ()):
    """One pass of size-supervised updates; returns (params, state, mean sampled loss).

    Per-sample estimator work is independent and may run on ``config.workers``
    threads; results are gathered in sample order so output is unchanged.
    """
    est = EstimatorConfig(config.n_samples, config.use_fast_flip_table)
    order_rng = stream(config.seed, *seed_keys, 0)
    losses = []
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for b, idx in enumerate(_batches(len(samples), config.batch_size, order_rng)):
            batch = [samples[i] for i in idx]
            fp = record(params, np.stack([s.image for s in batch]))
            logits = fp.logits.data[:, 0]

            def one(k):
                s = batch[k]
                probs = prob_map(logits[k], noise)
                rng = stream(config.seed, *seed_keys, 1, int(s.uid if s.uid >= 0 else idx[k]))
                g, loss = sample_grad_and_loss(probs, s.size, rng, est)
                return chain_to_logits(g, logits[k], noise), loss

            results = list(pool.map(one, range(len(batch)))) if pool else [one(k) for k in range(len(batch))]
            seed = np.stack([r[0] for r in results]) / len(batch)
            grads = fp.backward(seed)
            if config.mix_full_loss and full:
                pick = order_rng.choice(len(full), size=min(len(full), len(batch)), replace=False)
                fb = [full[i] for i in pick]
                masks = np.stack([s.mask for s in fb])
                _, g_full = bce_loss_and_grads(params, np.stack([s.image for s in fb]), masks)
                grads = {k: grads[k] + g_full[k] / masks.size for k in grads}
            params, state = sgd_step(params, grads, state)
            losses.extend(r[1] for r in results)
    finally:
        if pool:
            pool.shutdown()
    return params, state, float(np.mean(losses))


# --- phases ------------------------------------------------------------------

def validation_bce(params: NetworkParams, samples: Sequence[MaskedSample]) -> float:
    """Mean per-pixel BCE-with-logits over ``samples``."""
    logits = forward(params, np.stack([s.image for s in samples]))
    masks = np.stack([s.mask for s in samples])
    return bce_with_logits(logits, masks) / masks.size


def _early_stopping_loop(params, step, split: DatasetSplit, phase: str, max_epochs: int,
                         patience: int, best_score: float = float("inf"), monitor: str = "E"):
    """Run ``step(params, epoch) -> (params, loss)`` until the monitored validation score stalls.

    Returns the parameters with the lowest score seen, not the last ones.
    """
    best = params.copy()
    records = []
    stale = 0
    for epoch in range(1, max_epochs + 1):
        t0 = time.perf_counter()
        params, loss = step(params, epoch)
        duration = time.perf_counter() - t0
        val = evaluate(params, split.validation)
        records.append(EpochRecord(epoch, phase, loss, val.mean_E, val.mean_IoU, duration))
        score = val.mean_E if monitor == "E" else validation_bce(params, split.validation)
        if score < best_score:
            best_score, best, stale = score, params.copy(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best, records


def pretrain(config: TrainConfig, split: DatasetSplit):
    """Supervised phase on the fully annotated subset; returns (best params, records)."""
    if not split.train_full:
        raise ValueError("pre-training needs at least one fully annotated sample")
    params = init_params(config.arch, config.seed)
    state = OptimizerState(config.lr_pretrain, config.momentum)

    def step(p, epoch):
        nonlocal state
        rng = stream(config.seed, _PHASE_KEY["pretrain"], epoch)
        p, state, loss = supervised_epoch(p, state, split.train_full, config.batch_size, rng)
        return p, loss

    return _early_stopping_loop(
        params, step, split, "pretrain",
        config.pretrain_max_epochs or config.max_epochs,
        config.pretrain_patience or config.patience, monitor=config.pretrain_monitor)


def finetune(config: TrainConfig, params: NetworkParams, split: DatasetSplit):
    """Size-supervised phase on the weak subset, without augmentation.

    The incoming parameters are the initial best checkpoint, so the result
    never has a worse validation E than its input.
    """
    state = OptimizerState(config.lr_finetune, config.momentum)
    start_E = evaluate(params, split.validation).mean_E if split.validation else float("inf")

    def step(p, epoch):
        nonlocal state
        p, state, loss = weak_epoch(p, state, split.train_weak, config,
                                    (_PHASE_KEY["finetune"], epoch), full=split.train_full)
        return p, loss

    return _early_stopping_loop(params, step, split, "finetune", config.max_epochs,
                                config.patience, best_score=start_E)


# --- metrics and benchmarking ---------------------------------------------

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def metrics_csv(records: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow([_fmt(getattr(r, k)) for k in METRICS_HEADER])
    return buf.getvalue()


def write_metrics(records: Sequence[EpochRecord], path) -> Path:
    path = Path(path)
    path.write_text(metrics_csv(records))
    return path


def read_metrics(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), r["phase"], float(r["train_loss"]), float(r["val_E"]),
                        float(r["val_IoU"]), float(r["duration_s"])) for r in rows]


BENCH_HEADER = ("method", "n_samples", "epochs", "mean_s", "std_s")


def bench_epoch_duration(config: TrainConfig, params: NetworkParams, samples: Sequence[MaskedSample],
                         n_values: Sequence[int] = (1, 2, 4, 8), timed_epochs: int = 3) -> list[dict]:
    """Time training epochs over ``samples``: a supervised reference, then weak epochs per n.

    Every configuration starts from the same ``params`` and runs one untimed
    warm-up epoch before ``timed_epochs`` timed ones.
    """
    weak = [SizedSample(s.image, derive_size(s.mask), s.uid) for s in samples]
    rows = []

    def timed(run):
        durations = []
        p, state = params.copy(), None
        for e in range(timed_epochs + 1):
            t0 = time.perf_counter()
            p, state = run(p, state, e)
            if e:
                durations.append(time.perf_counter() - t0)
        return durations

    def sup(p, state, e):
        state = state or OptimizerState(config.lr_pretrain, config.momentum)
        p, state, _ = supervised_epoch(p, state, samples, config.batch_size,
                                       stream(config.seed, _PHASE_KEY["bench"], 0, e))
        return p, state

    d = timed(sup)
    rows.append({"method": "supervised", "n_samples": 0, "epochs": len(d),
                 "mean_s": float(np.mean(d)), "std_s": float(np.std(d))})
    for n in n_values:
        cfg = dataclasses.replace(config, n_samples=int(n))

        def wk(p, state, e, cfg=cfg):
            state = state or OptimizerState(cfg.lr_finetune, cfg.momentum)
            p, state, _ = weak_epoch(p, state, weak, cfg, (_PHASE_KEY["bench"], int(cfg.n_samples), e))
            return p, state

        d = timed(wk)
        rows.append({"method": "weak", "n_samples": int(n), "epochs": len(d),
                     "mean_s": float(np.mean(d)), "std_s": float(np.std(d))})
    return rows


def bench_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in BENCH_HEADER])
    return buf.getvalue()
