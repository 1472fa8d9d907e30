import json
from fractions import Fraction

import numpy as np
import pytest

from crt import checkpoint as ckpt
from crt.data import Dataset, SynthSpec, gen_synthetic, normalize, split
from crt.losses import LossConfig, recon_loss
from crt.model import CRTModel, ModelConfig
from crt.sequencing import CurriculumConfig, batch_plan
from crt.trainer import (TrainConfig, TrainingError, finetune, full_plan, masked_input, predict_proba,
                         prepare_patches, pretrain, pretrain_step_loss, read_loss_log, reconstruct_series,
                         run_experiment)

TINY = dict(D=16, encoder_layers=1, decoder_layers=1, heads=2, cnn_blocks=1, patch_len=4, time_length=32)


def toy(task="cross_domain", n=64, num_classes=4, seed=0, noise=0.1):
    ds = gen_synthetic(SynthSpec(n=n, L=32, task=task, num_classes=num_classes, seed=seed, noise_sigma=noise))
    return split(Dataset(normalize(ds.series), ds.labels, ds.num_classes, meta=ds.meta), seed=seed)


def quick(**kw):
    base = dict(epochs_pretrain=3, epochs_finetune=2, batch_size=16, curriculum=CurriculumConfig(0.3, 0.6, 4))
    return TrainConfig(**dict(base, **kw))


@pytest.fixture(scope="module")
def patches():
    return prepare_patches(toy().subset("train").series, 4)


class TestConfig:
    def test_label_fraction(self):
        with pytest.raises(ValueError):
            TrainConfig(label_fraction=0.0)

    def test_exclusive_ablations(self):
        with pytest.raises(ValueError, match="mutually exclusive"):
            TrainConfig(time_only=True, t2f=True)

    def test_no_cl_ratio(self):
        cfg = TrainConfig(no_cl=True, curriculum=CurriculumConfig(0.3, 0.7, 10))
        assert {cfg.ratio(i) for i in range(20)} == {0.7}

    def test_no_idc(self):
        assert not TrainConfig(no_idc=True).effective_loss.idc_enabled


class TestPretrain:
    def test_log_and_curriculum(self, patches, tmp_path):
        p, scaler = patches
        cfg = quick(epochs_pretrain=6)
        res = pretrain(p, CRTModel(ModelConfig(**TINY)), cfg, tmp_path, scaler)
        rows = read_loss_log(tmp_path / "pretrain_loss.csv")
        assert [r["epoch"] for r in rows] == list(range(6))
        for r in rows:
            assert r["ratio"] == float(max(Fraction(3, 10), min(Fraction(6, 10), Fraction(int(r["epoch"]), 4))))
            assert r["total"] == pytest.approx(r["recon"] + 0.1 * r["idc"])
        assert res.checkpoint.exists() and res.best_checkpoint.exists()
        meta = ckpt.read_manifest(res.checkpoint)["meta"]
        assert meta["epoch"] == 5 and meta["stage"] == "pretrain"

    def test_no_cl_logged_constant(self, patches):
        p, _ = patches
        res = pretrain(p, CRTModel(ModelConfig(**TINY)), quick(no_cl=True))
        assert {r["ratio"] for r in res.log} == {0.6}

    def test_deterministic(self, patches):
        p, _ = patches
        runs = []
        for _ in range(2):
            m = CRTModel(ModelConfig(**TINY))
            res = pretrain(p, m, quick())
            runs.append((res.log, [x.values.copy() for x in m.parameters()]))
        assert runs[0][0] == runs[1][0]
        assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            pretrain(np.zeros((0, 24, 1, 4)), CRTModel(ModelConfig(**TINY)), quick())

    def test_nan_aborts_with_context(self, patches):
        p, _ = patches
        bad = p.copy()
        bad[:] = np.nan
        with pytest.raises(TrainingError, match="epoch 0, batch 0"):
            pretrain(bad, CRTModel(ModelConfig(**TINY)), quick())

    def test_mask_mode_token_counts(self, patches):
        p, _ = patches
        m = CRTModel(ModelConfig(**TINY))
        layout = m.cfg.layout
        drop = batch_plan(layout, 4, 0.5, seed=0)
        mask = batch_plan(layout, 4, 0.5, seed=0, mode="mask")
        t_drop = m.embed_patches(p[:4], drop).tokens.shape[1]
        t_mask = m.embed_patches(masked_input(p[:4], mask), mask).tokens.shape[1]
        assert t_mask == layout.N + 3 and t_drop < t_mask
        masked = masked_input(p[:4], mask)
        for b in range(4):
            assert not masked[b, mask.dropped[b]].any()
            keep = np.setdiff1d(np.arange(layout.N), mask.dropped[b])
            np.testing.assert_array_equal(masked[b, keep], p[b, keep])

    @pytest.mark.parametrize("mode", ["t2f", "f2t"])
    def test_cross_modes_only_score_targets(self, patches, mode):
        p, _ = patches
        m = CRTModel(ModelConfig(**dict(TINY, ablation=mode)))
        plan = batch_plan(m.cfg.layout, 4, 0.5, 0, (), m.cfg.encoder_domains)
        _, recon, _ = pretrain_step_loss(m, p[:4], plan, LossConfig())
        enc = m.encode(m.embed_patches(p[:4], plan))
        rec = m.decode_reconstruct(enc, plan)
        assert recon.item() == recon_loss(rec, p[:4, m.target_positions]).item()
        # changing encoder-visible patches outside the target set cannot change the target tensor
        assert not np.intersect1d(m.target_positions, m.enc_positions).size


class TestFinetune:
    def test_separable_full_labels(self):
        ds = toy("freq_separable", n=120, num_classes=3, noise=0.05)
        tr, va = ds.subset("train"), ds.subset("val")
        tp, sc = prepare_patches(tr.series, 4)
        vp, _ = prepare_patches(va.series, 4, sc)
        m = CRTModel(ModelConfig(**dict(TINY, num_classes=3)))
        res = finetune(m, tp, tr.labels, vp, va.labels, quick(epochs_finetune=15, finetune_lr=3e-3))
        assert res.best_val_accuracy >= 0.95

    def test_keeps_best_weights(self, tmp_path):
        ds = toy()
        tr, va = ds.subset("train"), ds.subset("val")
        tp, sc = prepare_patches(tr.series, 4)
        vp, _ = prepare_patches(va.series, 4, sc)
        m = CRTModel(ModelConfig(**TINY))
        res = finetune(m, tp, tr.labels, vp, va.labels, quick(epochs_finetune=4), tmp_path)
        acc = (predict_proba(m, vp).argmax(1) == va.labels).mean()
        assert acc == res.best_val_accuracy == max(r["val_accuracy"] for r in res.log)
        assert (tmp_path / "finetune_metrics.csv").exists() and res.checkpoint.exists()

    def test_missing_class(self, patches):
        p, _ = patches
        m = CRTModel(ModelConfig(**TINY))
        with pytest.raises(ValueError, match="different seed"):
            finetune(m, p[:4], np.zeros(4, dtype=int), p[:4], np.zeros(4, dtype=int), quick())

    def test_linear_probe_underperforms_full(self):
        ds = toy("cross_domain", n=160, seed=2)
        tr, va = ds.subset("train"), ds.subset("val")
        tp, sc = prepare_patches(tr.series, 4)
        vp, _ = prepare_patches(va.series, 4, sc)
        acc = {}
        for probe in (False, True):
            m = CRTModel(ModelConfig(**dict(TINY, seed=2)))
            cfg = quick(epochs_finetune=10, linear_probe=probe, finetune_lr=3e-3)
            acc[probe] = finetune(m, tp, tr.labels, vp, va.labels, cfg).best_val_accuracy
        assert acc[True] < acc[False]

    def test_linear_probe_touches_only_classifier(self, patches):
        p, _ = patches
        m = CRTModel(ModelConfig(**TINY))
        before = [x.values.copy() for x in m.encoder_parameters()]
        labels = np.arange(len(p)) % 4
        finetune(m, p, labels, p[:8], labels[:8], quick(linear_probe=True))
        assert all(np.array_equal(a, x.values) for a, x in zip(before, m.encoder_parameters()))


class TestCheckpoint:
    @pytest.fixture()
    def saved(self, tmp_path):
        m = CRTModel(ModelConfig(**TINY))
        ckpt.save_checkpoint(m, tmp_path / "m", dict(epoch=3))
        return m, tmp_path / "m"

    def test_round_trip_forward(self, saved, patches):
        m, path = saved
        p, _ = patches
        loaded, manifest = ckpt.load_checkpoint(path)
        a = predict_proba(m, p[:5])
        b = predict_proba(loaded, p[:5])
        np.testing.assert_allclose(a, b, atol=1e-6)
        assert manifest["format_version"] == 1 and manifest["meta"]["epoch"] == 3
        names = [t["name"] for t in manifest["tensors"]]
        assert len(names) == len(set(names)) == len(m.parameters())

    def test_manifest_byte_flip(self, saved):
        _, path = saved
        mf = path.with_suffix(".json")
        raw = bytearray(mf.read_bytes())
        i = raw.index(b'"shape"') + 12
        raw[i] = ord("7") if raw[i] != ord("7") else ord("8")
        mf.write_bytes(bytes(raw))
        with pytest.raises(ckpt.CheckpointError):
            ckpt.load_checkpoint(path)

    def test_not_json(self, saved):
        _, path = saved
        path.with_suffix(".json").write_bytes(b"\x00garbage")
        with pytest.raises(ckpt.CheckpointCorruptError):
            ckpt.load_checkpoint(path)

    def test_version(self, saved):
        _, path = saved
        mf = path.with_suffix(".json")
        data = json.loads(mf.read_text())
        data["format_version"] = 2
        mf.write_text(json.dumps(data))
        with pytest.raises(ckpt.CheckpointVersionError):
            ckpt.load_checkpoint(path)

    def test_truncated_blob(self, saved):
        _, path = saved
        blob = path.with_suffix(".bin")
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(ckpt.CheckpointTruncatedError):
            ckpt.load_checkpoint(path)

    def test_blob_bit_flip(self, saved):
        _, path = saved
        blob = path.with_suffix(".bin")
        raw = bytearray(blob.read_bytes())
        raw[10] ^= 0xFF
        blob.write_bytes(bytes(raw))
        with pytest.raises(ckpt.CheckpointCorruptError):
            ckpt.load_checkpoint(path)

    def test_no_phase_refuses_full(self, tmp_path):
        ckpt.save_checkpoint(CRTModel(ModelConfig(**dict(TINY, ablation="no_phase"))), tmp_path / "np")
        with pytest.raises(ckpt.CheckpointShapeError):
            ckpt.load_into(CRTModel(ModelConfig(**TINY)), tmp_path / "np")

    def test_shape_mismatch(self, tmp_path):
        ckpt.save_checkpoint(CRTModel(ModelConfig(**TINY)), tmp_path / "a")
        with pytest.raises(ckpt.CheckpointShapeError, match="shape"):
            ckpt.load_into(CRTModel(ModelConfig(**dict(TINY, D=8))), tmp_path / "a")

    def test_distinct_codes(self):
        codes = {c.code for c in (ckpt.CheckpointVersionError, ckpt.CheckpointShapeError,
                                  ckpt.CheckpointTruncatedError, ckpt.CheckpointCorruptError)}
        assert len(codes) == 4


class TestPipeline:
    def test_run_experiment(self, tmp_path):
        res = run_experiment(toy(), ModelConfig(**TINY), quick(), tmp_path)
        assert 0 <= res.report.accuracy_overall <= 1
        for name in ("pretrain_loss.csv", "finetune_metrics.csv", "eval_report.json", "finetune_best.json"):
            assert (tmp_path / name).exists()

    def test_ablation_propagates(self):
        res = run_experiment(toy(), ModelConfig(**TINY), quick(freq_only=True, epochs_pretrain=1, epochs_finetune=1))
        assert res.model.cfg.ablation == "freq_only"

    def test_reconstruct_series(self, patches):
        ds = toy()
        series = ds.subset("test").series[:3]
        _, scaler = patches
        m = CRTModel(ModelConfig(**TINY))
        cases = reconstruct_series(m, series, scaler, 0.5, seed=1)
        assert len(cases) == 3
        for case, orig in zip(cases, series):
            np.testing.assert_array_equal(case.original, orig)
            assert case.reconstructed.shape == orig.shape and np.isfinite(case.reconstructed).all()
            hidden = np.isnan(case.dropped_input)
            assert 0 < hidden.mean() < 1
            np.testing.assert_array_equal(case.dropped_input[~hidden], orig[~hidden])

    def test_reconstruct_needs_time_target(self, patches):
        _, scaler = patches
        m = CRTModel(ModelConfig(**dict(TINY, ablation="t2f")))
        with pytest.raises(ValueError, match="time domain"):
            reconstruct_series(m, toy().series[:2], scaler, 0.5)


def test_full_plan_keeps_everything():
    m = CRTModel(ModelConfig(**TINY))
    plan = full_plan(m, 3)
    assert plan.kept.shape == (3, m.cfg.N_max) and plan.kept_mask.all()
