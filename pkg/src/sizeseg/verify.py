"""Oracle suite: every module invariant, measured and compared to its tolerance.

``verify("quick")`` is sized to finish in well under a minute on one core;
``"full"`` uses the instance counts of the acceptance runs. The report is a
plain dict ready for ``json.dump``.
"""
from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path
from typing import Callable

import numpy as np

from .data import (MaskedSample, SizedSample, augment_flip, derive_size, generate_synthetic,
                   split_dataset)
from .dtransform import chebyshev_dt, chebyshev_dt_bruteforce
from .estimator import (EstimatorConfig, chain_to_logits, exact_grad_wrt_probs, flip_estimate,
                        single_sample_grad)
from .grid import BACKGROUND, FOREGROUND, iou, size_error
from .network import (Architecture, bce_loss_and_grads, bce_with_logits, forward, init_params,
                      record, save_checkpoint)
from .sizefn import flip_size_table, flip_size_table_fast, object_size
from .stochastic import (all_masks, expected_loss_exact, logistic_cdf, make_rng, outcome_probs,
                         prob_map, sample_mask)
from .training import TrainConfig, evaluate, finetune, metrics_csv, pretrain

_SIZES = {
    "quick": dict(dt_masks=300, flip_masks=150, lemma=20, var_trials=2000, mc_n=20_000, prop=100),
    "full": dict(dt_masks=1000, flip_masks=500, lemma=50, var_trials=10_000, mc_n=100_000, prop=400),
}


@dataclasses.dataclass
class Check:
    module: str
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def _mask(rng, h, w, density=None):
    d = rng.uniform(0.1, 0.9) if density is None else density
    return np.where(rng.random((h, w)) < d, FOREGROUND, BACKGROUND)


def _shape(rng, lo, hi):
    return int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))


# --- core grid -------------------------------------------------------------

def _grid_checks(sz, rng, fault):
    sym = bounds = self_err = sets = 0.0
    for _ in range(sz["prop"]):
        h, w = _shape(rng, 1, 8)
        a, b = _mask(rng, h, w), _mask(rng, h, w)
        sym = max(sym, abs(iou(a, b) - iou(b, a)))
        v = iou(a, b)
        bounds = max(bounds, -v, v - 1)
        if np.any(a == FOREGROUND):
            self_err = max(self_err, abs(iou(a, a) - 1.0))
        fa, fb = set(np.flatnonzero(a == 1)), set(np.flatnonzero(b == 1))
        ref = 1.0 if not fa | fb else len(fa & fb) / len(fa | fb)
        sets = max(sets, abs(v - ref))
    se = 0.0
    for _ in range(sz["prop"]):
        x, y = rng.integers(0, 64, 2).astype(float)
        e = size_error(x, y)
        bad = e != size_error(y, x) or e < 0 or (e == 0) != (x == y)
        se = max(se, float(bad))
    return [
        Check("grid", "iou symmetric", sym, 1e-15, sym <= 1e-15),
        Check("grid", "iou in [0,1]", max(bounds, 0.0), 0.0, bounds <= 0.0),
        Check("grid", "iou(m,m)=1", self_err, 1e-15, self_err <= 1e-15),
        Check("grid", "iou closed form equals set form", sets, 1e-12, sets <= 1e-12),
        Check("grid", "size_error symmetric, nonnegative, zero iff equal", se, 0.0, se == 0.0),
    ]


# --- distance transform ------------------------------------------------------

def _raster_chamfer(mask):
    """Pixel-by-pixel two-pass chamfer with unit weights, written as plainly as possible."""
    h, w = mask.shape
    big = h + w
    d = np.where(mask == FOREGROUND, big, 0).astype(np.int64)
    for r in range(h):
        for c in range(w):
            for dr, dc in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w:
                    d[r, c] = min(d[r, c], d[rr, cc] + 1)
    for r in range(h - 1, -1, -1):
        for c in range(w - 1, -1, -1):
            for dr, dc in ((1, 1), (1, 0), (1, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w:
                    d[r, c] = min(d[r, c], d[rr, cc] + 1)
    return d


def _dt_checks(sz, rng, fault):
    mismatches = lip = zero = chamfer = 0
    injected = False
    for k in range(sz["dt_masks"]):
        h, w = _shape(rng, 1, 32)
        m = _mask(rng, h, w)
        if np.all(m == FOREGROUND):
            m.flat[rng.integers(m.size)] = BACKGROUND
        d = np.array(chebyshev_dt(m))
        if fault and not injected:
            d.flat[rng.integers(d.size)] += 1
            injected = True
        mismatches += int(not np.array_equal(d, chebyshev_dt_bruteforce(m)))
        lip = max(lip, int(np.abs(np.diff(d, axis=0)).max(initial=0)), int(np.abs(np.diff(d, axis=1)).max(initial=0)),
                  int(np.abs(d[1:, 1:] - d[:-1, :-1]).max(initial=0)), int(np.abs(d[1:, :-1] - d[:-1, 1:]).max(initial=0)))
        zero += int(np.sum((d == 0) != (m == BACKGROUND)))
        if k < 40 and h * w <= 144:
            chamfer += int(not np.array_equal(_raster_chamfer(m), chebyshev_dt_bruteforce(m)))
    n = sz["dt_masks"]
    return [
        Check("dtransform", "two-pass equals brute force", mismatches, 0, mismatches == 0, f"{n} masks"),
        Check("dtransform", "1-Lipschitz over 8-neighbours", lip, 1, lip <= 1),
        Check("dtransform", "zero exactly on background", zero, 0, zero == 0),
        Check("dtransform", "raster chamfer with unit steps is exact", chamfer, 0, chamfer == 0),
    ]


# --- size functional -----------------------------------------------------------

def _size_checks(sz, rng, fault):
    parity = mono = table = argmax = 0
    for _ in range(sz["prop"]):
        h, w = _shape(rng, 1, 12)
        m = _mask(rng, h, w)
        g = object_size(m)
        parity += int(g % 2 != 0 or not 0 <= g <= 2 * max(h, w))
        bg = np.flatnonzero(m == BACKGROUND)
        if bg.size:
            m2 = m.copy()
            m2.flat[rng.choice(bg)] = FOREGROUND
            mono += int(object_size(m2) < g)
        if np.any(m == BACKGROUND) and np.any(m == FOREGROUND):
            argmax += int(2 * np.max(chebyshev_dt(m)) != g)
    for _ in range(sz["flip_masks"]):
        h, w = _shape(rng, 1, 16)
        m = _mask(rng, h, w)
        ref = flip_size_table(m)
        fast = flip_size_table_fast(m)
        explicit = np.empty(m.size)
        for i in range(m.size):
            f = m.copy()
            f.flat[i] = -f.flat[i]
            explicit[i] = object_size(f)
        table += int(ref.base_size != fast.base_size
                     or not np.array_equal(ref.flipped_sizes, fast.flipped_sizes)
                     or not np.array_equal(ref.flipped_sizes.ravel(), explicit))
    return [
        Check("sizefn", "size even and within [0, 2 max(H,W)]", parity, 0, parity == 0),
        Check("sizefn", "monotone under foreground growth", mono, 0, mono == 0),
        Check("sizefn", "fast table = reference table = explicit sizes", table, 0, table == 0,
              f"{sz['flip_masks']} masks"),
        Check("sizefn", "size is twice the DT maximum", argmax, 0, argmax == 0),
    ]


# --- stochastic -----------------------------------------------------------------

def _stochastic_checks(sz, rng, fault):
    lin = 0.0
    for _ in range(30):
        shape = _shape(rng, 1, 3)
        p = rng.uniform(0.05, 0.95, shape)
        s = float(rng.integers(0, 7))
        i = rng.integers(p.size)
        vals = []
        for t in (0.0, 0.37, 1.0):
            q = p.copy()
            q.flat[i] = t
            vals.append(expected_loss_exact(q, s))
        lin = max(lin, abs(vals[1] - (0.63 * vals[0] + 0.37 * vals[2])) / max(1.0, abs(vals[1])))
    worst_se = 0.0
    n = sz["mc_n"]
    for _ in range(3):
        shape = _shape(rng, 2, 3)
        p = rng.uniform(0.1, 0.9, shape)
        s = 2.0 * rng.integers(0, 3)
        sizes = np.array([object_size(sample_mask(p, rng)) for _ in range(n)], dtype=float)
        losses = (s - sizes) ** 2
        se = losses.std(ddof=1) / np.sqrt(n)
        worst_se = max(worst_se, abs(losses.mean() - expected_loss_exact(p, s)) / se)
    a = np.linspace(-40, 40, 2001)
    sym = float(np.max(np.abs(logistic_cdf(a) + logistic_cdf(-a) - 1.0)))
    inner = logistic_cdf(np.linspace(-30, 30, 2001))
    increasing = bool(np.all(np.diff(inner) > 0))
    return [
        Check("stochastic", "expected loss multilinear", lin, 1e-12, lin <= 1e-12),
        Check("stochastic", "Monte-Carlo mean within 4 standard errors", worst_se, 4.0, worst_se <= 4.0,
              f"N={n}, worst of 3 instances"),
        Check("stochastic", "F(a)+F(-a)=1", sym, 1e-12, sym <= 1e-12),
        Check("stochastic", "logistic CDF strictly increasing on [-30,30]", float(not increasing), 0,
              increasing),
    ]


# --- estimator -------------------------------------------------------------------

def _estimator_checks(sz, rng, fault):
    worst = 0.0
    for _ in range(sz["lemma"]):
        h, w = _shape(rng, 1, 4)
        while h * w > 12:
            h, w = _shape(rng, 1, 4)
        p = rng.uniform(0.05, 0.95, (h, w))
        s = float(rng.integers(0, 2 * max(h, w) + 1))
        mean = sum(q * flip_estimate(m, s) for m, q in zip(all_masks(p.shape), outcome_probs(p)))
        worst = max(worst, float(np.max(np.abs(mean - exact_grad_wrt_probs(p, s)))))
    p = np.array([[0.3, 0.8, 0.6], [0.9, 0.5, 0.7]])
    trials = sz["var_trials"]
    var = {}
    for n in (1, 8):
        r = make_rng(100 + n)
        draws = np.array([single_sample_grad(p, 2.0, r, EstimatorConfig(n)) for _ in range(trials)])
        var[n] = draws.reshape(trials, -1).var(axis=0, ddof=1).sum()
    ratio = var[1] / var[8]
    sparse = 0
    for _ in range(30):
        y = _mask(rng, 8, 8, 0.7)
        est = flip_estimate(y, 6.0)
        t = flip_size_table(y)
        changed = t.flipped_sizes != t.base_size
        sparse += int(np.any(est[~changed] != 0) or np.count_nonzero(est) > np.count_nonzero(changed))
    slope = 0.0
    for _ in range(20):
        shape = _shape(rng, 1, 3)
        p = rng.uniform(0.05, 0.95, shape)
        s = float(rng.integers(0, 7))
        g = exact_grad_wrt_probs(p, s)
        for i in range(p.size):
            hi, lo = p.copy(), p.copy()
            hi.flat[i], lo.flat[i] = 1.0, 0.0
            slope = max(slope, abs(g.flat[i] - (expected_loss_exact(hi, s) - expected_loss_exact(lo, s))))
    return [
        Check("estimator", "flip estimate unbiased (exhaustive)", worst, 1e-10, worst <= 1e-10,
              f"{sz['lemma']} instances, V <= 12"),
        Check("estimator", "variance ratio n=1 : n=8", ratio, 8.0, 0.6 * 8 <= ratio <= 1.4 * 8,
              f"accepted band [4.8, 11.2], {trials} trials"),
        Check("estimator", "estimate zero where a flip leaves the size unchanged", sparse, 0, sparse == 0),
        Check("estimator", "exact gradient equals coordinate slope", slope, 1e-9, slope <= 1e-9),
    ]


# --- network ---------------------------------------------------------------------

def _gates(params, x):
    return np.concatenate([g.ravel() for g in record(params, x).gates])


def param_fd_check(params, x, loss_fn, grads, rel, floor=1e-7):
    """Worst relative error of ``grads`` against central differences of ``loss_fn``.

    Entries where the two perturbed evaluations see different ReLU gate
    patterns sit on a kink and are skipped. Returns (worst, skipped, total).
    """
    worst, skipped, total = 0.0, 0, 0
    for k, v in params.tensors.items():
        for idx in np.ndindex(v.shape):
            h = 1e-4 * max(abs(v[idx]), 1e-2)
            q = params.copy()
            q.tensors[k][idx] += h
            lp, gp = loss_fn(q), _gates(q, x)
            q.tensors[k][idx] -= 2 * h
            lm, gm = loss_fn(q), _gates(q, x)
            total += 1
            if not np.array_equal(gp, gm):
                skipped += 1
                continue
            fd = (lp - lm) / (2 * h)
            an = grads[k][idx]
            worst = max(worst, abs(fd - an) / (max(abs(fd), abs(an)) + floor / rel))
    return worst, skipped, total


def _jitter_biases(params, rng):
    for k in params.tensors:
        if k.endswith(".b"):
            params.tensors[k] = rng.normal(0, 0.1, params.tensors[k].shape)
    return params


def _network_checks(sz, rng, fault):
    worst, skipped, total = 0.0, 0, 0
    for seed in range(3):
        p = _jitter_biases(init_params(Architecture(2, 3), seed), np.random.default_rng(seed))
        x = rng.random((8, 8))
        m = _mask(rng, 8, 8, 0.5)
        _, grads = bce_loss_and_grads(p, x, m)
        wr, sk, tt = param_fd_check(p, x, lambda q: bce_with_logits(forward(q, x), m), grads, 1e-4)
        worst, skipped, total = max(worst, wr), skipped + sk, total + tt
    p = init_params(seed=1)
    xs = rng.random((3, 16, 16))
    batched = forward(p, xs)
    single = all(forward(p, xs[i]).tobytes() == batched[i].tobytes() for i in range(3))
    q = _jitter_biases(init_params(Architecture(1, 2), 5), np.random.default_rng(5))
    x = rng.random((2, 6))
    a = forward(q, x)
    seed = chain_to_logits(exact_grad_wrt_probs(prob_map(a), 2.0), a)
    grads = record(q, x).backward(seed[None])
    inj, sk2, tt2 = param_fd_check(q, x, lambda r: expected_loss_exact(prob_map(forward(r, x)), 2.0), grads, 1e-3)
    return [
        Check("network", "backward equals finite differences", worst, 1e-4, worst < 1e-4,
              f"3 seeds, 8x8, {skipped}/{total} kink entries skipped"),
        Check("network", "forward invariant to batch decomposition", float(not single), 0, single),
        Check("network", "injected estimator gradient equals FD of expected loss", inj, 1e-3, inj < 1e-3,
              f"2x6 image, {sk2}/{tt2} kink entries skipped"),
    ]


# --- data ------------------------------------------------------------------------

def _data_checks(sz, rng, fault):
    samples = generate_synthetic(60, 16, 16, seed=int(rng.integers(1 << 30)))
    bad_sizes = 0
    for s in samples:
        try:
            SizedSample(s.image, derive_size(s.mask), s.uid)
        except ValueError:
            bad_sizes += 1
    sp = split_dataset(samples, (0.5, 0.2, 0.3), m_full=10, seed=1)
    uids = [s.uid for part in (sp.train_full, sp.train_weak, sp.validation, sp.test) for s in part]
    partition = sorted(uids) == sorted(s.uid for s in samples)
    aug = 0
    for s in samples[:20]:
        t = augment_flip(s, rng)
        aug += int(np.sum(t.mask == FOREGROUND) != np.sum(s.mask == FOREGROUND))
    return [
        Check("data", "generated masks yield valid size labels", bad_sizes, 0, bad_sizes == 0),
        Check("data", "split is a disjoint partition", float(not partition), 0, partition),
        Check("data", "flip augmentation keeps the foreground count", aug, 0, aug == 0),
    ]


# --- training --------------------------------------------------------------------

def _training_checks(sz, rng, fault, workdir=None):
    import tempfile

    samples = generate_synthetic(48, 16, 16, families=("disc",), seed=5)
    split = split_dataset(samples, (0.5, 0.25, 0.25), m_full=6, seed=0)
    cfg = TrainConfig(m_full=6, batch_size=6, lr_pretrain=5e-2, max_epochs=4, patience=4, depth=1,
                      base_channels=4)

    def run(folder):
        p, rec = pretrain(cfg, split)
        q, rec2 = finetune(dataclasses.replace(cfg, lr_finetune=1e-2, max_epochs=2, patience=2), p, split)
        blob = save_checkpoint(q, Path(folder) / "net.ckpt").read_bytes()
        stripped = [dataclasses.replace(r, duration_s=0.0) for r in rec + rec2]
        return blob, metrics_csv(stripped), p, rec

    with tempfile.TemporaryDirectory() as d1, tempfile.TemporaryDirectory() as d2:
        a, b = run(d1), run(d2)
    same = a[0] == b[0] and a[1] == b[1]
    weak_only = all(isinstance(s, SizedSample) and not hasattr(s, "mask") for s in split.train_weak)
    best = min(r.val_E for r in a[3])
    got = evaluate(a[2], split.validation).mean_E
    return [
        Check("training", "identical config gives identical checkpoint and log", float(not same), 0, same,
              "duration column excluded"),
        Check("training", "weak samples carry no mask", float(not weak_only), 0, weak_only),
        Check("training", "early stopping returns the best validation E", abs(got - best), 0, got == best),
    ]


_GROUPS: list[Callable] = [_grid_checks, _dt_checks, _size_checks, _stochastic_checks,
                           _estimator_checks, _network_checks, _data_checks, _training_checks]


def verify(depth: str = "quick", inject_dt_fault: bool = False, seed: int = 0) -> dict:
    """Run every oracle and return a JSON-ready report.

    ``inject_dt_fault`` adds 1 to a single pixel of one distance transform
    before comparison, which must make the equivalence check fail.
    """
    if depth not in _SIZES:
        raise ValueError("depth must be 'quick' or 'full'")
    sz = _SIZES[depth]
    checks = []
    t_all = time.perf_counter()
    for i, group in enumerate(_GROUPS):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i,))))
        t0 = time.perf_counter()
        out = group(sz, rng, inject_dt_fault)
        dt = (time.perf_counter() - t0) / len(out)
        for c in out:
            c.seconds = dt
        checks.extend(out)
    return {
        "depth": depth,
        "seed": seed,
        "fault_injected": inject_dt_fault,
        "passed": all(c.passed for c in checks),
        "seconds": time.perf_counter() - t_all,
        "checks": [_jsonable(dataclasses.asdict(c)) for c in checks],
    }


def _jsonable(d):
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in d.items()}


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2) + "\n")
    return path


def format_report(report: dict) -> str:
    lines = []
    for c in report["checks"]:
        mark = "PASS" if c["passed"] else "FAIL"
        lines.append(f"{mark}  {c['module']:<10} {c['name']:<55} measured={c['measured']:.3g} tol={c['tolerance']:.3g}")
    lines.append(f"{'all passed' if report['passed'] else 'FAILURES'} in {report['seconds']:.1f} s")
    return "\n".join(lines)
