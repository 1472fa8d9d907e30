"""Datasets: synthetic generators, UCI HAR ingestion, splits and on-disk export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")

HAR_SIGNALS = [f"{kind}_{axis}" for kind in ("body_acc", "body_gyro", "total_acc") for axis in "xyz"]


@dataclass
class TimeSeries:
    values: np.ndarray  # (d, L)
    label: int | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class Dataset:
    series: np.ndarray  # (n, d, L)
    labels: np.ndarray | None
    num_classes: int
    split_tags: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.ndim != 3:
            raise ValueError(f"series must be (n, d, L), got {self.series.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.series):
                raise ValueError("labels and series lengths differ")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.series)

    @property
    def samples(self) -> list[TimeSeries]:
        labels = self.labels if self.labels is not None else [None] * len(self)
        return [TimeSeries(s, None if y is None else int(y)) for s, y in zip(self.series, labels)]

    def subset(self, which) -> "Dataset":
        """Rows by index array, boolean mask, or split tag."""
        if isinstance(which, str):
            if self.split_tags is None:
                raise ValueError("dataset has no split tags")
            which = self.split_tags == which
        tags = None if self.split_tags is None else self.split_tags[which]
        labels = None if self.labels is None else self.labels[which]
        return Dataset(self.series[which], labels, self.num_classes, tags, dict(self.meta))


# ---------------------------------------------------------------------------
# synthetic tasks

@dataclass
class SynthSpec:
    n: int = 512
    L: int = 128
    d: int = 1
    num_classes: int = 4
    task: str = "cross_domain"
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.task not in ("freq_separable", "shape_separable", "cross_domain"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.L % 2 or self.L < 16:
            raise ValueError("L must be even and at least 16")
        if self.n < self.num_classes * 10:
            raise ValueError("need at least 10 samples per class")
        if self.task == "cross_domain" and self.num_classes != 4:
            raise ValueError("cross_domain has exactly 4 classes (2 frequency x 2 shape factors)")
        if self.task == "shape_separable" and not 2 <= self.num_classes <= 4:
            raise ValueError("shape_separable supports 2 to 4 classes")
        if self.num_classes < 2 or self.noise_sigma < 0 or self.d < 1:
            raise ValueError("invalid synthetic spec")


def carrier_bins(num_classes: int, L: int) -> np.ndarray:
    """Well-separated integer frequency bins, one per class."""
    lo, hi = 3, L // 4
    return np.round(np.linspace(lo, hi, num_classes)).astype(int)


def motif(width: int) -> np.ndarray:
    """Asymmetric transient: a fast rise followed by a slow linear decay."""
    rise = max(2, width // 6)
    return np.concatenate([np.linspace(0.0, 1.0, rise, endpoint=False), np.linspace(1.0, 0.0, width - rise)])


def _shape_variant(kind: int, width: int) -> np.ndarray:
    # time reversal and negation both leave the magnitude spectrum unchanged
    m = motif(width)
    return [m, m[::-1], -m, -m[::-1]][kind]


def gen_synthetic(spec: SynthSpec) -> Dataset:
    """Synthetic classification data with controllable time/frequency class signal.

    freq_separable: class sets the carrier frequency.
    shape_separable: class sets the orientation/sign of a transient motif at a
        random offset (all variants share one magnitude spectrum).
    cross_domain: label = 2 * frequency_factor + shape_factor, carrier in one of
        two bands plus a motif that is either upright or negated. Negation
        keeps the magnitude spectrum, so the shape factor is invisible to it.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, L, d = spec.n, spec.L, spec.d
    labels = rng.permutation(np.arange(n) % spec.num_classes)
    t = np.arange(L)
    width = L // 4
    series = np.zeros((n, d, L))
    freq_factor = np.zeros(n, dtype=np.int64)
    shape_factor = np.zeros(n, dtype=np.int64)
    for i, y in enumerate(labels):
        if spec.task == "freq_separable":
            f, kind, use_motif = carrier_bins(spec.num_classes, L)[y], 0, False
            freq_factor[i] = y
        elif spec.task == "shape_separable":
            f, kind, use_motif = None, int(y), True
            shape_factor[i] = y
        else:
            fi, si = divmod(int(y), 2)
            f, kind, use_motif = carrier_bins(2, L)[fi], 2 * si, True
            freq_factor[i], shape_factor[i] = fi, si
        for c in range(d):
            x = np.zeros(L)
            if f is not None:
                amp = rng.uniform(0.8, 1.2)
                x += amp * np.sin(2 * np.pi * f * t / L + rng.uniform(0, 2 * np.pi))
            if use_motif:
                start = rng.integers(0, L - width + 1)
                x[start:start + width] += 2.0 * _shape_variant(kind, width)
            series[i, c] = x + spec.noise_sigma * rng.standard_normal(L)
    meta = dict(task=spec.task, seed=spec.seed, freq_factor=freq_factor.tolist(),
                shape_factor=shape_factor.tolist())
    return Dataset(series, labels, spec.num_classes, meta=meta)


def ecg_like(L: int = 512, period: int = 64, rng: np.random.Generator | None = None) -> np.ndarray:
    """Periodic P-QRS-T-like beat train built from Gaussian bumps.

    With ``rng`` the beat phase, bump widths and amplitudes are jittered.
    """
    jit = (lambda scale: 1.0 + scale * rng.standard_normal()) if rng is not None else (lambda scale: 1.0)
    offset = rng.uniform(0, 1) if rng is not None else 0.0
    ph = ((np.arange(L) / period) + offset) % 1.0
    bumps = [(0.15, 0.030, 0.10), (0.27, 0.010, -0.15), (0.30, 0.015, 1.0), (0.33, 0.010, -0.25),
             (0.60, 0.050, 0.20)]
    x = np.zeros(L)
    for centre, width, amp in bumps:
        x += amp * jit(0.1) * np.exp(-((ph - centre) / (width * jit(0.1))) ** 2)
    return x


def multi_harmonic(L: int, rng: np.random.Generator, min_harmonics: int = 3, max_harmonics: int = 12
                   ) -> np.ndarray:
    """Random periodic signal: harmonics of a low fundamental, amplitudes rolling off as 1/sqrt(k)."""
    n = np.arange(L)
    f0 = rng.integers(2, 9)
    K = rng.integers(min_harmonics, max_harmonics + 1)
    x = np.zeros(L)
    for k in range(1, K + 1):
        x += rng.uniform(0.2, 1.0) / np.sqrt(k) * np.cos(2 * np.pi * f0 * k * n / L + rng.uniform(0, 2 * np.pi))
    return x


def peak_bin(x: np.ndarray) -> int:
    """Index of the largest non-DC magnitude bin of a 1-D series."""
    spectrum = np.abs(np.fft.rfft(x - x.mean()))
    spectrum[0] = 0.0
    return int(np.argmax(spectrum))


def motif_polarity(x: np.ndarray) -> int:
    """0 for an upright motif, 1 for a negated one.

    The dominant carrier (peak bin and its neighbours) is notched out first,
    then the larger excursion from the median decides.
    """
    x = np.asarray(x, dtype=np.float64)
    spectrum = np.fft.rfft(x - x.mean())
    k = peak_bin(x)
    spectrum[max(k - 1, 0):k + 2] = 0.0
    y = np.fft.irfft(spectrum, len(x))
    med = np.median(y)
    return 0 if y.max() - med > med - y.min() else 1


def motif_orientation(x: np.ndarray) -> int:
    """0 if the steepest slope is a rise (forward motif), 1 if it is a fall."""
    kernel = np.ones(3) / 3
    dx = np.diff(np.convolve(x, kernel, mode="same"))
    return 0 if dx.max() > -dx.min() else 1


# ---------------------------------------------------------------------------
# normalisation and splits

def normalize(series: np.ndarray, mode: str = "minmax") -> np.ndarray:
    """Per-sample, per-channel scaling; constant channels map to zero."""
    series = np.asarray(series, dtype=np.float64)
    if mode == "none":
        return series.copy()
    if mode == "minmax":
        lo = series.min(axis=-1, keepdims=True)
        span = series.max(axis=-1, keepdims=True) - lo
        return np.where(span > 0, (series - lo) / np.where(span > 0, span, 1.0), 0.0)
    if mode == "zscore":
        mu = series.mean(axis=-1, keepdims=True)
        sd = series.std(axis=-1, keepdims=True)
        return np.where(sd > 0, (series - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    raise ValueError(f"unknown normalisation {mode!r}")


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Seeded random train/val/test partition."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    n = len(ds)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(f"empty split for n={n} and fractions {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    tags = np.empty(n, dtype=object)
    tags[perm[:n_train]] = "train"
    tags[perm[n_train:n_train + n_val]] = "val"
    tags[perm[n_train + n_val:]] = "test"
    return Dataset(ds.series, ds.labels, ds.num_classes, tags.astype(str), dict(ds.meta))


def stratified_subsample(labels: np.ndarray, fraction: float = 0.2, seed: int = 0,
                         num_classes: int | None = None) -> np.ndarray:
    """Sorted indices of a class-stratified ``fraction`` of ``labels``.

    Raises if any class ends up absent from the subsample.
    """
    if not 0 < fraction <= 1:
        raise ValueError("label fraction must lie in (0, 1]")
    labels = np.asarray(labels)
    num_classes = int(labels.max()) + 1 if num_classes is None else num_classes
    rng = np.random.default_rng(seed)
    picked = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        k = int(round(fraction * len(members)))
        if k == 0:
            raise ValueError(f"class {c} is absent from the {fraction:.0%} labelled subsample; "
                             "try a different seed or a larger label fraction")
        picked.append(rng.choice(members, size=k, replace=False))
    return np.sort(np.concatenate(picked))


# ---------------------------------------------------------------------------
# UCI HAR

class DataFormatError(ValueError):
    pass


def _read_matrix(path: Path, width: int | None = None) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                row = [float(tok) for tok in tokens]
            except ValueError:
                bad = next(tok for tok in tokens if not _is_float(tok))
                raise DataFormatError(f"{path}:{lineno}: non-numeric token {bad!r}") from None
            if width is not None and len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} values, found {len(row)}")
            rows.append(row)
    return np.array(rows, dtype=np.float64)


def _is_float(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _load_har_split(root: Path, part: str) -> tuple[np.ndarray, np.ndarray]:
    base = root / part
    labels_path = base / f"y_{part}.txt"
    if not labels_path.exists():
        raise DataFormatError(f"missing label file {labels_path}")
    labels = _read_matrix(labels_path, width=1)[:, 0].astype(np.int64)
    channels = []
    for name in HAR_SIGNALS:
        path = base / "Inertial Signals" / f"{name}_{part}.txt"
        if not path.exists():
            raise DataFormatError(f"missing signal file {path}")
        mat = _read_matrix(path, width=128)
        if len(mat) != len(labels):
            raise DataFormatError(f"{path}: {len(mat)} rows but {labels_path.name} has {len(labels)}")
        channels.append(mat)
    return np.stack(channels, axis=1), labels


def load_ucihar(root, seed: int = 0, normalization: str = "minmax") -> Dataset:
    """UCI HAR 'Inertial Signals' layout: 9 x 128 samples, six activity classes.

    The provided train/test partition is kept; a validation split of 10% of
    the total sample count is carved from train with ``seed``.
    """
    root = Path(root)
    x_tr, y_tr = _load_har_split(root, "train")
    x_te, y_te = _load_har_split(root, "test")
    labels = np.concatenate([y_tr, y_te]) - 1
    if labels.min() < 0 or labels.max() > 5:
        raise DataFormatError("HAR labels must lie in 1..6")
    series = normalize(np.concatenate([x_tr, x_te]), normalization)
    n = len(labels)
    tags = np.array(["train"] * len(y_tr) + ["test"] * len(y_te), dtype=object)
    n_val = int(round(0.1 * n))
    if n_val >= len(y_tr):
        raise DataFormatError("training partition too small to carve a validation split")
    tags[np.random.default_rng(seed).choice(len(y_tr), size=n_val, replace=False)] = "val"
    return Dataset(series, labels, 6, tags.astype(str), dict(source="ucihar"))


# ---------------------------------------------------------------------------
# export / import

HEADER = "dataset.json"
BLOB = "series.f32"
LABELS = "labels.csv"


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Header JSON + raw little-endian float32 blob + label CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, d, L = ds.series.shape
    header = dict(n=n, L=L, d=d, classes=ds.num_classes, seed=ds.meta.get("seed"),
                  task=ds.meta.get("task"), dtype="<f4", layout="n,d,L")
    ds.series.astype("<f4").tofile(out / BLOB)
    with open(out / LABELS, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label", "split"])
        for i in range(n):
            label = "" if ds.labels is None else int(ds.labels[i])
            tag = "" if ds.split_tags is None else ds.split_tags[i]
            writer.writerow([i, label, tag])
    (out / HEADER).write_text(json.dumps(header, indent=2))
    return out


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    header = json.loads((src / HEADER).read_text())
    n, d, L = header["n"], header["d"], header["L"]
    raw = np.fromfile(src / BLOB, dtype="<f4")
    if raw.size != n * d * L:
        raise DataFormatError(f"{src / BLOB}: expected {n * d * L} floats, found {raw.size}")
    labels, tags = [], []
    with open(src / LABELS, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(row["label"])
            tags.append(row["split"])
    if len(labels) != n:
        raise DataFormatError(f"{src / LABELS}: expected {n} rows, found {len(labels)}")
    lab = None if any(x == "" for x in labels) else np.array(labels, dtype=np.int64)
    tag_arr = None if any(t == "" for t in tags) else np.array(tags)
    meta = {k: header[k] for k in ("seed", "task") if header.get(k) is not None}
    return Dataset(raw.reshape(n, d, L).astype(np.float64), lab, header["classes"], tag_arr, meta)
