"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line and the terminal summary repeats them.
The two training criteria (7 and 8) take roughly 20 minutes together on a
single core; the full-model runs are shared between them.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from crt import checkpoint as ckpt
from crt.data import Dataset, SynthSpec, ecg_like, gen_synthetic, multi_harmonic, normalize
from crt.losses import idc_from_similarities, recon_loss
from crt.metrics import accuracy, binary_auc, macro_f1
from crt.model import CRTModel, ModelConfig
from crt.numerics.gradcheck import op_gradient_audit
from crt.sequencing import (DATASET_PRESETS, DropPlan, apply_mask, assemble, batch_plan, make_patches,
                            sample_drop_plan)
from crt.spectral import ComplexSeq, dft_naive, fft, phase_magnitude_demo, restore_complex, to_magnitude_phase
from crt.trainer import (TrainConfig, end_to_end_gradcheck, masked_input, predict_proba, prepare_patches,
                         pretrain, run_experiment)

SEEDS = (0, 1, 2)
TINY = dict(D=16, encoder_layers=1, decoder_layers=1, heads=2, cnn_blocks=1, patch_len=4, time_length=32)


def test_c01_gradient_audit(acceptance):
    start = time.time()
    worst = op_gradient_audit(trials=20, seed=0)
    e2e = end_to_end_gradcheck(seed=0)
    seconds = time.time() - start
    op_max = max(worst.values())
    acceptance.check("C1 gradient audit", op_max < 1e-4 and e2e < 1e-3 and seconds < 60,
                     f"ops={len(worst)} worst_op={op_max:.2e} end_to_end={e2e:.2e} time={seconds:.1f}s")


def test_c02_spectral_oracle(acceptance):
    rng = np.random.default_rng(0)
    fft_err = 0.0
    for N in (7, 8, 100, 128, 3000):
        t = rng.standard_normal(N)
        a, b = fft(t).to_complex(), dft_naive(t).to_complex()
        fft_err = max(fft_err, np.abs(a - b).max() / max(1.0, np.abs(b).max()))
    z = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
    z[:8] = [0, 2, -2, 3j, -3j, 1 + 0j, -1 - 1j, -1 + 1j]
    back = restore_complex(to_magnitude_phase(ComplexSeq.from_complex(z))).to_complex()
    rt_err = np.abs(back - z).max()
    acceptance.check("C2 spectral oracle", fft_err <= 1e-6 and rt_err <= 1e-12,
                     f"fft_vs_dft={fft_err:.2e} round_trip={rt_err:.2e}")


def test_c03_phase_vs_magnitude(acceptance):
    _, _, d_phase, d_mag = phase_magnitude_demo(ecg_like(512, 64))
    rng = np.random.default_rng(0)
    wins = 0
    for _ in range(100):
        _, _, dp, dm = phase_magnitude_demo(multi_harmonic(256, rng))
        wins += dp < dm
    acceptance.check("C3 phase closer than magnitude", d_phase < d_mag and wins >= 80,
                     f"ecg d_phase={d_phase:.3f} d_mag={d_mag:.3f} random_wins={wins}/100")


def test_c04_curriculum_log(acceptance):
    series = np.random.default_rng(0).standard_normal((2, 1, 32))
    patches, _ = prepare_patches(series, 4)
    mismatches = 0
    epochs = 0
    for name in ("ptbxl", "har", "sleepedf"):
        cur = DATASET_PRESETS[name]["curriculum"]
        cfg = TrainConfig(epochs_pretrain=cur.n_epoch, batch_size=2, curriculum=cur)
        res = pretrain(patches, CRTModel(ModelConfig(**dict(TINY, encoder_layers=0, decoder_layers=0))), cfg)
        for row in res.log:
            i = row["epoch"]
            expected = max(Fraction(cur.r_min), min(Fraction(cur.r_max), Fraction(i, cur.n_epoch)))
            mismatches += row["ratio"] != float(expected)
            epochs += 1
    acceptance.check("C4 curriculum trace", mismatches == 0, f"epochs={epochs} mismatches={mismatches}")


def test_c05_dropping_semantics(acceptance):
    ps = make_patches(assemble(np.random.default_rng(0).standard_normal((9, 128))), 8)
    layout = ps.layout
    unpaired = 0
    for s in range(10_000):
        d = sample_drop_plan(ps, 0.3 + 0.5 * (s % 2), seed=s).dropped
        mags = d[(d >= layout.n_time) & (d < layout.n_time + layout.n_freq)]
        unpaired += not np.array_equal(mags + layout.n_freq, d[d >= layout.n_time + layout.n_freq])
    units = layout.n_time + layout.n_freq
    fracs = []
    for s in range(10_000):
        d = sample_drop_plan(ps, 0.3, seed=s, sampling="bernoulli").dropped
        fracs.append(((d < layout.n_time).sum() + (d >= layout.n_time).sum() // 2) / units)
    sigma = math.sqrt(0.3 * 0.7 / (units * len(fracs)))
    z = abs(np.mean(fracs) - 0.3) / sigma
    m = CRTModel(ModelConfig(**dict(TINY, time_length=128, patch_len=8)))
    grid, _ = prepare_patches(np.random.default_rng(1).standard_normal((4, 1, 128)), 8)
    drop = batch_plan(layout, 4, 0.5, seed=0)
    mask = batch_plan(layout, 4, 0.5, seed=0, mode="mask")
    k_drop = m.embed_patches(grid, drop).tokens.shape[1]
    k_mask = m.embed_patches(masked_input(grid, mask), mask).tokens.shape[1]
    plan = sample_drop_plan(ps, 0.5, seed=3)
    masked = apply_mask(ps, DropPlan(plan.kept, plan.dropped, 0.5, mode="mask"))
    zeroed = np.flatnonzero(~masked.values.reshape(ps.N, -1).any(axis=1))
    ok = unpaired == 0 and z < 3 and k_drop < k_mask == layout.N + 3 and np.array_equal(zeroed, plan.dropped)
    acceptance.check("C5 dropping semantics", ok,
                     f"unpaired={unpaired}/10000 bernoulli_z={z:.2f} tokens drop={k_drop} mask={k_mask}")


def test_c06_loss_closed_forms(acceptance):
    x = np.random.default_rng(0).standard_normal((3, 5))
    r0 = recon_loss(x, x).item()
    r1 = recon_loss(x + 1, x).item()
    i2 = idc_from_similarities(np.eye(2)).item()
    i3 = idc_from_similarities(np.ones((3, 3))).item()
    ok = r0 == 0 and abs(r1 - 1) < 1e-12 and abs(i2 - math.log(2) / 2) < 1e-9 and abs(i3 - (1 + math.log(6)) / 6) < 1e-9
    acceptance.check("C6 loss closed forms", ok, f"recon0={r0} recon1={r1:.12f} idc2={i2:.10f} idc3={i3:.10f}")


# ---------------------------------------------------------------------------
# training criteria

def cross_domain(seed: int) -> Dataset:
    ds = gen_synthetic(SynthSpec(n=512, L=128, d=1, task="cross_domain", seed=seed))
    return Dataset(normalize(ds.series), ds.labels, ds.num_classes, meta=ds.meta)


@pytest.fixture(scope="session")
def experiment_cache():
    cache = {}

    def get(seed: int, variant: str = "full"):
        key = (seed, variant)
        if key not in cache:
            flags = {} if variant == "full" else {variant: True}
            cfg = TrainConfig(seed=seed, epochs_pretrain=50, epochs_finetune=30, label_fraction=0.2, **flags)
            cache[key] = run_experiment(cross_domain(seed), ModelConfig(seed=seed), cfg, split_seed=seed)
        return cache[key]

    return get


@pytest.mark.slow
def test_c07_end_to_end(acceptance, experiment_cache):
    start = time.time()
    results = [experiment_cache(s) for s in SEEDS]
    seconds = time.time() - start
    ratios = [r.pretrain.log[-1]["recon"] / r.pretrain.log[0]["recon"] for r in results]
    accs = [r.report.accuracy_overall for r in results]
    ok = max(ratios) <= 0.5 and np.mean(accs) >= 0.80 and seconds <= 15 * 60
    acceptance.check("C7 end-to-end smoke", ok,
                     f"recon_last/first={[round(x, 3) for x in ratios]} test_acc={[round(a, 3) for a in accs]} "
                     f"mean={np.mean(accs):.3f} time={seconds / 60:.1f}min")


@pytest.mark.slow
def test_c08_directional_ablations(acceptance, experiment_cache):
    mean = {v: float(np.mean([experiment_cache(s, v if v != "full" else "full").report.accuracy_overall
                              for s in SEEDS]))
            for v in ("full", "time_only", "freq_only", "mask_mode")}
    margins = {"full-time_only": mean["full"] - mean["time_only"], "full-freq_only": mean["full"] - mean["freq_only"],
               "drop-mask": mean["full"] - mean["mask_mode"]}
    ok = all(m >= -0.02 for m in margins.values())
    acceptance.check("C8 directional ablations", ok,
                     " ".join(f"{k}={100 * v:+.2f}pt" for k, v in margins.items())
                     + " means=" + ",".join(f"{k}:{v:.3f}" for k, v in mean.items()))


# ---------------------------------------------------------------------------

def _brute_auc(scores, positive):
    pos, neg = scores[positive], scores[~positive]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (len(pos) * len(neg))


def test_c09_metrics_oracle(acceptance):
    rng = np.random.default_rng(0)
    mismatches = 0
    for trial in range(300):
        n = int(rng.integers(2, 201))
        scores = rng.integers(0, 20, n) / 20 if trial % 2 else rng.standard_normal(n)
        positive = rng.random(n) < rng.uniform(0.1, 0.9)
        positive[0], positive[-1] = True, False
        mismatches += binary_auc(scores, positive) != _brute_auc(scores, positive)
    hand = (binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
            and macro_f1([1, 1, 1, 1], [0, 0, 1, 1], 2)[1] == pytest.approx(1 / 3, abs=1e-15)
            and accuracy([0, 1, 1], [0, 1, 2], 3) == pytest.approx((2 / 3, 7 / 9), abs=1e-15)
            and accuracy([1, 0], [0, 1], 2) == (0.0, 0.0))
    acceptance.check("C9 metrics oracle", mismatches == 0 and hand, f"auc_mismatches={mismatches}/300 hand={hand}")


def test_c10_determinism_and_persistence(acceptance, tmp_path):
    series = np.random.default_rng(0).standard_normal((24, 1, 32))
    patches, _ = prepare_patches(series, 4)
    cfg = TrainConfig(epochs_pretrain=4, batch_size=8, deterministic=True)
    logs = []
    for run in range(2):
        model = CRTModel(ModelConfig(**TINY))
        logs.append(pretrain(patches, model, cfg, tmp_path / f"run{run}").log)
    same_logs = logs[0] == logs[1] and \
        (tmp_path / "run0" / "pretrain_loss.csv").read_bytes() == (tmp_path / "run1" / "pretrain_loss.csv").read_bytes()
    ckpt.save_checkpoint(model, tmp_path / "m")
    loaded, _ = ckpt.load_checkpoint(tmp_path / "m")
    err = np.abs(predict_proba(model, patches) - predict_proba(loaded, patches)).max()
    acceptance.check("C10 determinism and persistence", same_logs and err <= 1e-6,
                     f"identical_logs={same_logs} reload_max_diff={err:.2e}")
