import numpy as np
import pytest

from sizeseg.data import DatasetSplit, MaskedSample, SizedSample, generate_synthetic, split_dataset
from sizeseg.grid import FOREGROUND
from sizeseg.network import Architecture, OptimizerState, init_params, zero_params
from sizeseg.sizefn import object_size
from sizeseg.training import (METRICS_HEADER, EpochRecord, TrainConfig, bench_csv, bench_epoch_duration,
                              evaluate, finetune, metrics_csv, pretrain, read_metrics, stream,
                              validation_bce, weak_epoch, write_metrics)


@pytest.fixture(scope="module")
def split():
    s = generate_synthetic(64, 32, 32, families=("disc",), seed=0)
    return split_dataset(s, (0.5, 0.25, 0.25), m_full=16, seed=0)


def identity_params():
    """Depth-0 network computing image - 0.5, exact on 0/1 images."""
    p = zero_params(Architecture(0, 1))
    p.tensors["enc0.w"][0, 0, 1, 1] = 1.0
    p.tensors["out.w"][0, 0, 1, 1] = 1.0
    p.tensors["head.w"][:] = 1.0
    p.tensors["head.b"][:] = -0.5
    return p


def binary_samples():
    out = []
    for k, s in enumerate(generate_synthetic(6, 12, 12, seed=9)):
        out.append(MaskedSample((s.mask == FOREGROUND).astype(float), s.mask, k))
    return out


class TestEvaluate:
    def test_exact_prediction(self):
        res = evaluate(identity_params(), binary_samples())
        assert res.mean_E == 0.0 and res.mean_IoU == 1.0
        assert len(res.rows) == 6

    def test_all_background(self):
        p = zero_params(Architecture(0, 1))
        p.tensors["head.b"][:] = -1.0
        samples = binary_samples()
        res = evaluate(p, samples)
        assert res.mean_IoU == 0.0
        assert res.mean_E == pytest.approx(np.mean([object_size(s.mask) ** 2 for s in samples]))
        assert all(r["pred_size"] == 0 for r in res.rows)

    def test_rows_keep_order(self):
        samples = binary_samples()
        res = evaluate(identity_params(), samples, batch_size=4)
        assert [r["uid"] for r in res.rows] == [s.uid for s in samples]


class TestConfig:
    def test_from_json(self, tmp_path):
        (tmp_path / "c.json").write_text('{"seed": 7, "n_samples": 4, "lr_finetune": 0.002}')
        c = TrainConfig.from_json(tmp_path / "c.json")
        assert (c.seed, c.n_samples, c.lr_finetune, c.batch_size) == (7, 4, 0.002, 16)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"sed": 1})

    @pytest.mark.parametrize("kw", [{"n_samples": 0}, {"batch_size": 0}, {"depth": -1},
                                    {"pretrain_monitor": "loss"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_streams_independent(self):
        a = stream(0, 1, 2).random(4)
        assert np.array_equal(a, stream(0, 1, 2).random(4))
        assert not np.array_equal(a, stream(0, 1, 3).random(4))
        assert not np.array_equal(a, stream(1, 1, 2).random(4))


class TestPhases:
    def test_patience_one_lr_zero(self, split):
        cfg = TrainConfig(lr_pretrain=0.0, max_epochs=20, patience=1, m_full=16)
        p, rec = pretrain(cfg, split)
        assert [r.epoch for r in rec] == [1, 2]
        ref = init_params(cfg.arch, cfg.seed)
        assert all(np.array_equal(p.tensors[k], ref.tensors[k]) for k in ref.tensors)

    def test_pretrain_reduces_bce(self, split):
        cfg = TrainConfig(m_full=16, lr_pretrain=5e-2, max_epochs=40, patience=40,
                          pretrain_monitor="bce", batch_size=8)
        before = validation_bce(init_params(cfg.arch, cfg.seed), split.validation)
        p, rec = pretrain(cfg, split)
        assert validation_bce(p, split.validation) <= 0.5 * before
        assert rec[-1].train_loss <= 0.5 * rec[0].train_loss
        assert [r.epoch for r in rec] == list(range(1, len(rec) + 1))
        assert all(r.val_E >= 0 and 0 <= r.val_IoU <= 1 and r.duration_s > 0 for r in rec)

    def test_returns_best_not_last(self, split):
        cfg = TrainConfig(m_full=16, lr_pretrain=5e-2, max_epochs=25, patience=25, batch_size=8)
        p, rec = pretrain(cfg, split)
        best = min(r.val_E for r in rec)
        assert evaluate(p, split.validation).mean_E == best

    def test_pretrain_deterministic(self, split):
        cfg = TrainConfig(m_full=16, lr_pretrain=5e-2, max_epochs=4, patience=4, batch_size=8)
        (p1, r1), (p2, r2) = pretrain(cfg, split), pretrain(cfg, split)
        strip = lambda rs: [(r.epoch, r.phase, r.train_loss, r.val_E, r.val_IoU) for r in rs]
        assert strip(r1) == strip(r2)
        assert all(p1.tensors[k].tobytes() == p2.tensors[k].tobytes() for k in p1.tensors)

    def test_finetune_never_worse(self, split):
        cfg = TrainConfig(m_full=16, lr_pretrain=5e-2, max_epochs=3, patience=3, batch_size=8)
        p, _ = pretrain(cfg, split)
        start = evaluate(p, split.validation).mean_E
        q, rec = finetune(TrainConfig(lr_finetune=1e-1, max_epochs=2, patience=2, batch_size=8), p, split)
        assert evaluate(q, split.validation).mean_E <= start
        assert {r.phase for r in rec} == {"finetune"} and len(rec) == 2

    def test_needs_full_samples(self, split):
        empty = DatasetSplit(train_weak=split.train_weak, validation=split.validation)
        with pytest.raises(ValueError):
            pretrain(TrainConfig(), empty)

    def test_weak_epoch_workers_agree(self, split):
        p = init_params(Architecture(1, 4), 0)
        weak = split.train_weak[:12]
        out = []
        for workers in (1, 3):
            cfg = TrainConfig(batch_size=4, n_samples=2, workers=workers)
            q, _, loss = weak_epoch(p, OptimizerState(1e-2), weak, cfg, (2, 1))
            out.append((loss, b"".join(q.tensors[k].tobytes() for k in q.tensors)))
        assert out[0] == out[1]

    def test_weak_epoch_zero_lr_keeps_params(self, split):
        p = init_params(Architecture(1, 4), 0)
        q, _, loss = weak_epoch(p, OptimizerState(0.0), split.train_weak[:4], TrainConfig(batch_size=2), (2, 1))
        assert loss >= 0
        assert all(np.array_equal(p.tensors[k], q.tensors[k]) for k in p.tensors)


class TestMetrics:
    def test_csv_header_and_roundtrip(self, tmp_path):
        recs = [EpochRecord(1, "pretrain", 0.5, 1.25, 0.75, 0.01),
                EpochRecord(2, "finetune", 0.1 + 0.2, 0.0, 1.0, 0.02)]
        text = metrics_csv(recs)
        assert text.splitlines()[0] == ",".join(METRICS_HEADER)
        assert read_metrics(write_metrics(recs, tmp_path / "m.csv")) == recs

    def test_bench_rows(self, split):
        rows = bench_epoch_duration(TrainConfig(batch_size=8, depth=1, base_channels=2), init_params(Architecture(1, 2)),
                                    split.train_full[:8], n_values=(1, 2), timed_epochs=1)
        assert rows[0]["method"] == "supervised"
        assert [r["n_samples"] for r in rows if r["method"] != "supervised"] == [1, 2]
        assert bench_csv(rows).splitlines()[0] == "method,n_samples,epochs,mean_s,std_s"
