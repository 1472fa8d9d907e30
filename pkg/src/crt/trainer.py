"""Pretraining, fine-tuning and evaluation loops."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import Dataset, split, stratified_subsample
from .losses import LossBreakdown, LossConfig, cross_entropy, idc_loss, recon_loss, total_loss
from .metrics import EvalReport, evaluate_scores, softmax
from .model import CRTModel, ModelConfig
from .numerics import AdamState, adam_step, backward, clip_grad_norm, limit_threads
from .numerics.tensor import DiffArray
from .sequencing import (BatchPlan, CurriculumConfig, Domain, PatchLayout, assemble_batch, batch_plan,
                         curriculum_ratio, derive_seed, patchify, unpatchify)

log = logging.getLogger(__name__)

DOMAIN_ABLATIONS = ("no_phase", "time_only", "freq_only", "t2f", "f2t")
LOSS_LOG_HEADER = ["epoch", "recon", "idc", "total", "ratio"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs_pretrain: int = 50
    epochs_finetune: int = 30
    batch_size: int = 32
    finetune_batch_size: int = 16
    lr: float = 1e-3
    finetune_lr: float = 1e-3
    seed: int = 0
    curriculum: CurriculumConfig = field(default_factory=lambda: CurriculumConfig(0.3, 0.6, 50))
    loss: LossConfig = field(default_factory=LossConfig)
    mask_mode: bool = False
    no_cl: bool = False
    no_idc: bool = False
    no_phase: bool = False
    time_only: bool = False
    freq_only: bool = False
    t2f: bool = False
    f2t: bool = False
    label_fraction: float = 0.2
    sampling: str = "exact"
    grad_clip: float | None = None
    lr_schedule: str = "constant"
    deterministic: bool = True
    linear_probe: bool = False

    def __post_init__(self):
        if isinstance(self.curriculum, dict):
            self.curriculum = CurriculumConfig(**self.curriculum)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if not 0 < self.label_fraction <= 1:
            raise ValueError("label_fraction must lie in (0, 1]")
        if sum(bool(getattr(self, a)) for a in DOMAIN_ABLATIONS) > 1:
            raise ValueError(f"domain ablations are mutually exclusive: {DOMAIN_ABLATIONS}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")

    @property
    def ablation(self) -> str:
        for a in DOMAIN_ABLATIONS:
            if getattr(self, a):
                return a
        return "full"

    @property
    def mode(self) -> str:
        return "mask" if self.mask_mode else "drop"

    @property
    def effective_loss(self) -> LossConfig:
        return LossConfig(self.loss.beta, self.loss.idc_enabled and not self.no_idc)

    def ratio(self, epoch: int) -> float:
        if self.no_cl:
            return self.curriculum.r_max
        return curriculum_ratio(self.curriculum, epoch)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# input preparation

@dataclass
class FeatureScaler:
    """Per-(channel, position) standardisation of tri-domain sequences."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "FeatureScaler":
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), 1e-6))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def to_dict(self) -> dict:
        return dict(mean=self.mean.tolist(), std=self.std.tolist())

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(np.array(d["mean"]), np.array(d["std"]))


def prepare_patches(series: np.ndarray, patch_len: int, scaler: FeatureScaler | None = None
                    ) -> tuple[np.ndarray, FeatureScaler]:
    """Series (n, d, L) -> standardised patch grids (n, N, d, P) and the scaler used."""
    x = assemble_batch(series)
    PatchLayout(series.shape[-1], patch_len)
    scaler = scaler or FeatureScaler.fit(x)
    return patchify(scaler.transform(x), patch_len), scaler


def _lr(base: float, schedule: str, step: int, total: int) -> float:
    if schedule == "cosine" and total > 0:
        return base * 0.5 * (1 + math.cos(math.pi * min(step, total) / total))
    return base


def _snapshot(model) -> list[np.ndarray]:
    return [p.values.copy() for p in model.parameters()]


def _restore(model, snap) -> None:
    for p, v in zip(model.parameters(), snap):
        p.values[...] = v


# ---------------------------------------------------------------------------
# pretraining

def masked_input(patches: np.ndarray, plan: BatchPlan) -> np.ndarray:
    out = patches.copy()
    for b, dropped in enumerate(plan.dropped):
        out[b, dropped] = 0.0
    return out


def pretrain_step_loss(model: CRTModel, patches: np.ndarray, plan: BatchPlan, loss_cfg: LossConfig,
                       mode: str = "drop") -> tuple[DiffArray, DiffArray, DiffArray | None]:
    """Build the graph for one batch; returns (total, recon, idc)."""
    enc_in = masked_input(patches, plan) if mode == "mask" else patches
    tokens = model.embed_patches(enc_in, plan)
    enc = model.encode(tokens)
    rec = model.decode_reconstruct(enc, plan)
    target = patches[:, model.target_positions]
    # the reconstruction covers exactly the target-domain patches, never the encoder-only ones
    assert rec.shape == target.shape, (rec.shape, target.shape)
    recon = recon_loss(rec, target)
    idc = None
    if loss_cfg.idc_enabled and loss_cfg.beta > 0 and patches.shape[0] >= 2:
        z1, z2 = model.project_idc(enc.representation, model.pooled_patch_embeddings(tokens))
        idc = idc_loss(z1, z2)
    return total_loss(recon, idc, loss_cfg), recon, idc


@dataclass
class PretrainResult:
    log: list[dict]
    checkpoint: Path | None = None
    best_checkpoint: Path | None = None
    seconds: float = 0.0


def pretrain(patches: np.ndarray, model: CRTModel, cfg: TrainConfig, out_dir=None,
             scaler: FeatureScaler | None = None) -> PretrainResult:
    """Curriculum dropping + reconstruction (+ IDC) with Adam; one log row per epoch."""
    n = len(patches)
    if n == 0:
        raise ValueError("pretraining split is empty")
    start = time.time()
    params = model.pretrain_parameters()
    state = AdamState(learning_rate=cfg.lr)
    loss_cfg = cfg.effective_loss
    enc_domains = model.cfg.encoder_domains
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs_pretrain * steps_per_epoch
    rows, best, best_snap = [], math.inf, None
    with limit_threads(cfg.deterministic):
        for epoch in range(cfg.epochs_pretrain):
            r = cfg.ratio(epoch)
            order = derive_seed(cfg.seed, 1, epoch).permutation(n)
            sums = np.zeros(3)
            count = 0
            for bi in range(steps_per_epoch):
                idx = order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
                if len(idx) < 2:
                    continue
                plan = batch_plan(model.cfg.layout, len(idx), r, cfg.seed, (epoch, bi), enc_domains,
                                  cfg.mode, cfg.sampling)
                try:
                    total, recon, idc = pretrain_step_loss(model, patches[idx], plan, loss_cfg, cfg.mode)
                    model.zero_grad()
                    backward(total)
                except FloatingPointError as exc:
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}: {exc}") from exc
                if cfg.grad_clip:
                    clip_grad_norm(params, cfg.grad_clip)
                lr = _lr(cfg.lr, cfg.lr_schedule, epoch * steps_per_epoch + bi, total_steps)
                adam_step(state, params, lr=lr)
                w = len(idx)
                sums += w * np.array([recon.item(), 0.0 if idc is None else idc.item(), total.item()])
                count += w
            recon_m, idc_m, _ = sums / count
            bd = total_loss(recon_m, idc_m, loss_cfg)
            rows.append(dict(epoch=epoch, recon=bd.recon, idc=bd.idc, total=bd.total, ratio=r))
            log.info("pretrain epoch %d r=%.3f recon=%.4f idc=%.4f", epoch, r, bd.recon, bd.idc)
            if bd.recon < best:
                best, best_snap = bd.recon, _snapshot(model)
    result = PretrainResult(rows, seconds=time.time() - start)
    if out_dir is not None:
        out = Path(out_dir)
        write_loss_log(rows, out / "pretrain_loss.csv")
        meta = dict(stage="pretrain", epoch=cfg.epochs_pretrain - 1, train_config=cfg.to_dict(),
                    scaler=scaler.to_dict() if scaler else None, rng_seed=cfg.seed)
        result.checkpoint = ckpt.save_checkpoint(model, out / "pretrain_last", meta)[0]
        if best_snap is not None:
            current = _snapshot(model)
            _restore(model, best_snap)
            result.best_checkpoint = ckpt.save_checkpoint(model, out / "pretrain_best_recon", meta)[0]
            _restore(model, current)
    return result


def write_loss_log(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_LOG_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LOSS_LOG_HEADER})


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(epoch=int(r["epoch"]), recon=float(r["recon"]), idc=float(r["idc"]),
                     total=float(r["total"]), ratio=float(r["ratio"])) for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# fine-tuning and evaluation

def full_plan(model: CRTModel, batch: int) -> BatchPlan:
    """No dropping: every encoder-domain patch is kept."""
    return batch_plan(model.cfg.layout, batch, 0.0, 0, (), model.cfg.encoder_domains)


def representations(model: CRTModel, patches: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    for s in range(0, len(patches), batch_size):
        chunk = patches[s:s + batch_size]
        out.append(model.representation(chunk, full_plan(model, len(chunk))).values)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.D))


def predict_proba(model: CRTModel, patches: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    for s in range(0, len(patches), batch_size):
        chunk = patches[s:s + batch_size]
        rep = model.representation(chunk, full_plan(model, len(chunk)))
        out.append(softmax(model.classify(rep).values))
    return np.concatenate(out)


def evaluate(model: CRTModel, patches: np.ndarray, labels: np.ndarray) -> EvalReport:
    return evaluate_scores(predict_proba(model, patches), labels, model.cfg.num_classes)


@dataclass
class FinetuneResult:
    log: list[dict]
    best_val_accuracy: float
    best_epoch: int
    checkpoint: Path | None = None
    seconds: float = 0.0


def finetune(model: CRTModel, patches: np.ndarray, labels: np.ndarray, val_patches: np.ndarray,
             val_labels: np.ndarray, cfg: TrainConfig, out_dir=None, meta: dict | None = None) -> FinetuneResult:
    """Cross-entropy on classify(representation); keeps the best-validation-accuracy weights.

    ``linear_probe`` freezes everything but the classifier.
    """
    start = time.time()
    n = len(patches)
    present = np.unique(labels)
    if len(present) < model.cfg.num_classes:
        missing = sorted(set(range(model.cfg.num_classes)) - set(present.tolist()))
        raise ValueError(f"classes {missing} absent from the labelled subsample; "
                         "try a different seed or a larger label fraction")
    params = model.classifier.parameters() if cfg.linear_probe else \
        model.encoder_parameters() + model.classifier.parameters()
    state = AdamState(learning_rate=cfg.finetune_lr)
    B = cfg.finetune_batch_size
    steps = max(1, math.ceil(n / B))
    total_steps = cfg.epochs_finetune * steps
    frozen = representations(model, patches) if cfg.linear_probe else None
    rows, best_acc, best_epoch, best_snap = [], -1.0, -1, None
    with limit_threads(cfg.deterministic):
        for epoch in range(cfg.epochs_finetune):
            order = derive_seed(cfg.seed, 2, epoch).permutation(n)
            loss_sum = 0.0
            for bi in range(steps):
                idx = order[bi * B:(bi + 1) * B]
                if len(idx) == 0:
                    continue
                if frozen is not None:
                    rep = DiffArray(frozen[idx])
                else:
                    rep = model.representation(patches[idx], full_plan(model, len(idx)))
                loss = cross_entropy(model.classify(rep), labels[idx])
                model.zero_grad()
                backward(loss)
                if cfg.grad_clip:
                    clip_grad_norm(params, cfg.grad_clip)
                adam_step(state, params, lr=_lr(cfg.finetune_lr, cfg.lr_schedule, epoch * steps + bi, total_steps))
                loss_sum += loss.item() * len(idx)
            val_acc = float((predict_proba(model, val_patches).argmax(1) == val_labels).mean())
            rows.append(dict(epoch=epoch, train_loss=loss_sum / n, val_accuracy=val_acc))
            log.info("finetune epoch %d loss=%.4f val_acc=%.4f", epoch, loss_sum / n, val_acc)
            if val_acc > best_acc:
                best_acc, best_epoch, best_snap = val_acc, epoch, _snapshot(model)
    _restore(model, best_snap)
    result = FinetuneResult(rows, best_acc, best_epoch, seconds=time.time() - start)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "finetune_metrics.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_accuracy"])
            writer.writeheader()
            writer.writerows(rows)
        full_meta = dict(meta or {}, stage="finetune", epoch=best_epoch, train_config=cfg.to_dict())
        result.checkpoint = ckpt.save_checkpoint(model, out / "finetune_best", full_meta)[0]
    return result


# ---------------------------------------------------------------------------
# whole pipeline

@dataclass
class ExperimentResult:
    pretrain: PretrainResult | None
    finetune: FinetuneResult
    report: EvalReport
    seconds: float
    model: CRTModel | None = None


def run_experiment(ds: Dataset, model_cfg: ModelConfig, cfg: TrainConfig, out_dir=None,
                   split_seed: int = 0) -> ExperimentResult:
    """split -> pretrain on train -> fine-tune on a labelled fraction -> evaluate on test."""
    start = time.time()
    if ds.split_tags is None:
        ds = split(ds, seed=split_seed)
    if model_cfg.ablation != cfg.ablation:
        model_cfg = ModelConfig(**dict(model_cfg.to_dict(), ablation=cfg.ablation))
    train, val, test = ds.subset("train"), ds.subset("val"), ds.subset("test")
    train_p, scaler = prepare_patches(train.series, model_cfg.patch_len)
    val_p, _ = prepare_patches(val.series, model_cfg.patch_len, scaler)
    test_p, _ = prepare_patches(test.series, model_cfg.patch_len, scaler)
    model = CRTModel(model_cfg)
    out = None if out_dir is None else Path(out_dir)
    pre = None
    if cfg.epochs_pretrain > 0:
        pre = pretrain(train_p, model, cfg, out, scaler)
    labelled = stratified_subsample(train.labels, cfg.label_fraction, cfg.seed, model_cfg.num_classes)
    fin = finetune(model, train_p[labelled], train.labels[labelled], val_p, val.labels, cfg, out,
                   meta=dict(scaler=scaler.to_dict()))
    report = evaluate(model, test_p, test.labels)
    if out is not None:
        (out / "eval_report.json").write_text(report.to_json())
    return ExperimentResult(pre, fin, report, time.time() - start, model)


# ---------------------------------------------------------------------------
# reconstruction demo and end-to-end audit

@dataclass
class ReconstructionCase:
    original: np.ndarray  # (d, L)
    dropped_input: np.ndarray  # (d, L), NaN where a time patch was dropped
    reconstructed: np.ndarray  # (d, L)


def reconstruct_series(model: CRTModel, series: np.ndarray, scaler: FeatureScaler, ratio: float,
                       seed: int = 0) -> list[ReconstructionCase]:
    """Drop a ``ratio`` of the patches, decode, and map the time block back to series scale."""
    if Domain.TIME not in model.cfg.target_domains:
        raise ValueError(f"ablation {model.cfg.ablation!r} does not reconstruct the time domain")
    patches, _ = prepare_patches(series, model.cfg.patch_len, scaler)
    B, L = len(series), series.shape[-1]
    plan = batch_plan(model.cfg.layout, B, ratio, seed, (), model.cfg.encoder_domains)
    rec = model.decode_reconstruct(model.encode(model.embed_patches(patches, plan)), plan).values
    grid = patches.copy()
    grid[:, model.target_positions] = rec
    restored = unpatchify(grid) * scaler.std + scaler.mean
    P = model.cfg.patch_len
    cases = []
    for b in range(B):
        shown = series[b].astype(np.float64).copy()
        for i in plan.dropped[b]:
            if i < L // P:
                shown[:, i * P:(i + 1) * P] = np.nan
        cases.append(ReconstructionCase(series[b].astype(np.float64), shown, restored[b, :, :L]))
    return cases


MICRO_CONFIG = dict(D=8, encoder_layers=1, decoder_layers=1, heads=2, cnn_blocks=1, mlp_ratio=2.0,
                    patch_len=4, time_length=16, num_classes=2)


def end_to_end_gradcheck(seed: int = 0, h: float = 1e-6, max_entries: int = 12) -> float:
    """Worst relative error of the full pretraining loss gradient on a micro model."""
    from .numerics import finite_difference_check

    rng = np.random.default_rng(seed)
    model = CRTModel(ModelConfig(seed=seed, **MICRO_CONFIG))
    series = rng.standard_normal((3, 1, MICRO_CONFIG["time_length"]))
    patches, _ = prepare_patches(series, MICRO_CONFIG["patch_len"])
    plan = batch_plan(model.cfg.layout, 3, 0.5, seed, (), model.cfg.encoder_domains)
    loss_cfg = LossConfig()

    def f():
        total, _, idc = pretrain_step_loss(model, patches, plan, loss_cfg)
        assert idc is not None
        return total

    return finite_difference_check(f, model.pretrain_parameters(), h=h, max_entries=max_entries,
                                   rng=np.random.default_rng(seed))
