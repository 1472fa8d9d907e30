"""Tri-domain assembly, typed patching, dropping/masking and the ratio curriculum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .spectral import spectral_pair


class Domain(IntEnum):
    TIME = 0
    MAGNITUDE = 1
    PHASE = 2


ALL_DOMAINS = (Domain.TIME, Domain.MAGNITUDE, Domain.PHASE)


@dataclass
class TriDomainSequence:
    """[time | magnitude | phase] blocks of lengths L_t, L_t/2, L_t/2."""

    values: np.ndarray  # (d, 2 * L_t)
    time_length: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != 2 * self.time_length:
            raise ValueError(f"values shape {self.values.shape} inconsistent with L_t={self.time_length}")

    @property
    def L(self) -> int:
        return 2 * self.time_length

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def domain_tags(self) -> np.ndarray:
        Lt = self.time_length
        return np.repeat(np.array(ALL_DOMAINS, dtype=np.int64), [Lt, Lt // 2, Lt // 2])

    def block(self, domain: Domain) -> np.ndarray:
        Lt = self.time_length
        start = {Domain.TIME: 0, Domain.MAGNITUDE: Lt, Domain.PHASE: Lt + Lt // 2}[domain]
        stop = start + (Lt if domain == Domain.TIME else Lt // 2)
        return self.values[:, start:stop]


def _series_array(t) -> np.ndarray:
    values = getattr(t, "values", t)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    if values.ndim != 2:
        raise ValueError(f"expected a (channels, length) series, got shape {values.shape}")
    return values


def assemble(t) -> TriDomainSequence:
    """Concatenate the series with its half-spectrum magnitude and phase, channel by channel."""
    values = _series_array(t)
    Lt = values.shape[1]
    if Lt == 0:
        raise ValueError("cannot assemble an empty series")
    if Lt % 2:
        raise ValueError(f"series length {Lt} is odd; truncate one sample before assembly")
    pair = spectral_pair(values, Lt)
    return TriDomainSequence(np.concatenate([values, pair.magnitude, pair.phase], axis=1), Lt)


def assemble_batch(series: np.ndarray) -> np.ndarray:
    """Vectorised ``assemble`` over a (B, d, L_t) array; returns (B, d, 2 L_t)."""
    series = np.asarray(series, dtype=np.float64)
    Lt = series.shape[-1]
    if Lt == 0 or Lt % 2:
        raise ValueError(f"series length {Lt} must be even and positive")
    pair = spectral_pair(series, Lt)
    return np.concatenate([series, pair.magnitude, pair.phase], axis=-1)


@dataclass(frozen=True)
class PatchLayout:
    """Patch indexing of a tri-domain sequence: time patches, then magnitude, then phase."""

    time_length: int
    patch_len: int

    def __post_init__(self):
        Lt, P = self.time_length, self.patch_len
        if P < 1 or Lt % 2 or Lt % P or (Lt // 2) % P:
            valid = [p for p in range(1, Lt // 2 + 1) if Lt % p == 0 and (Lt // 2) % p == 0]
            raise ValueError(f"patch length {P} must divide both {Lt} and {Lt // 2}; valid choices: {valid}")

    @property
    def n_time(self) -> int:
        return self.time_length // self.patch_len

    @property
    def n_freq(self) -> int:
        return self.time_length // 2 // self.patch_len

    @property
    def N(self) -> int:
        return self.n_time + 2 * self.n_freq

    @property
    def domains(self) -> np.ndarray:
        return np.repeat(np.array(ALL_DOMAINS, dtype=np.int64), [self.n_time, self.n_freq, self.n_freq])

    def indices(self, domain: Domain) -> np.ndarray:
        start = {Domain.TIME: 0, Domain.MAGNITUDE: self.n_time,
                 Domain.PHASE: self.n_time + self.n_freq}[domain]
        n = self.n_time if domain == Domain.TIME else self.n_freq
        return np.arange(start, start + n)

    def twin(self, index: int) -> int | None:
        """Phase twin of a magnitude patch and vice versa; None for time patches."""
        if index < self.n_time:
            return None
        if index < self.n_time + self.n_freq:
            return index + self.n_freq
        return index - self.n_freq


@dataclass
class PatchSet:
    values: np.ndarray  # (n, d, P)
    positions: np.ndarray  # original patch indices
    domains: np.ndarray
    layout: PatchLayout

    @property
    def P(self) -> int:
        return self.layout.patch_len

    @property
    def N(self) -> int:
        return len(self.positions)

    @property
    def patches(self) -> list[tuple[Domain, int, np.ndarray]]:
        return [(Domain(dm), int(pos), v) for dm, pos, v in zip(self.domains, self.positions, self.values)]

    @property
    def freq_pairing(self) -> dict[int, int]:
        present = set(self.positions.tolist())
        mags = self.positions[self.domains == Domain.MAGNITUDE]
        return {int(m): self.layout.twin(int(m)) for m in mags if self.layout.twin(int(m)) in present}

    def select_domains(self, domains) -> "PatchSet":
        keep = np.isin(self.domains, [int(d) for d in domains])
        return PatchSet(self.values[keep], self.positions[keep], self.domains[keep], self.layout)


def make_patches(x: TriDomainSequence, P: int) -> PatchSet:
    layout = PatchLayout(x.time_length, P)
    values = x.values.reshape(x.d, layout.N, P).transpose(1, 0, 2).copy()
    return PatchSet(values, np.arange(layout.N), layout.domains, layout)


def patchify(x: np.ndarray, P: int) -> np.ndarray:
    """(B, d, L) -> (B, N, d, P)."""
    B, d, L = x.shape
    return x.reshape(B, d, L // P, P).transpose(0, 2, 1, 3)


def unpatchify(patches: np.ndarray) -> np.ndarray:
    """(B, N, d, P) -> (B, d, N * P)."""
    B, N, d, P = patches.shape
    return patches.transpose(0, 2, 1, 3).reshape(B, d, N * P)


@dataclass
class DropPlan:
    kept: np.ndarray
    dropped: np.ndarray
    ratio: float
    mode: str = "drop"
    seed: int | None = None
    sampling: str = "exact"

    def __post_init__(self):
        self.kept = np.sort(np.asarray(self.kept, dtype=np.int64))
        self.dropped = np.sort(np.asarray(self.dropped, dtype=np.int64))
        if self.mode not in ("drop", "mask"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if np.intersect1d(self.kept, self.dropped).size:
            raise ValueError("kept and dropped indices overlap")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def _units(positions: np.ndarray, layout: PatchLayout) -> tuple[list[list[int]], list[list[int]]]:
    """Split present patches into time units and frequency units (twins grouped)."""
    present = set(positions.tolist())
    time_units, freq_units, seen = [], [], set()
    for pos in positions.tolist():
        if pos in seen:
            continue
        twin = layout.twin(pos)
        if twin is None:
            time_units.append([pos])
        elif twin in present:
            freq_units.append(sorted((pos, twin)))
            seen.add(twin)
        else:
            freq_units.append([pos])
        seen.add(pos)
    return time_units, freq_units


def derive_seed(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def sample_drop_plan(ps: PatchSet, r: float, seed, mode: str = "drop", sampling: str = "exact") -> DropPlan:
    """Choose which patches to remove at ratio ``r``.

    Time patches are dropped individually; a magnitude patch and its phase
    twin are always dropped together. ``exact`` drops round(r * count) units in
    each block (at least one frequency unit when r > 0); ``bernoulli`` drops
    every unit independently with probability r.
    """
    if not 0 < r < 1:
        raise ValueError(f"dropping ratio must lie in (0, 1), got {r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    time_units, freq_units = _units(ps.positions, ps.layout)
    dropped: list[int] = []
    if sampling == "exact":
        counts = [min(round_half_up(r * len(time_units)), len(time_units)),
                  min(max(round_half_up(r * len(freq_units)), 1 if freq_units else 0), len(freq_units))]
        if counts[0] + counts[1] == len(time_units) + len(freq_units):
            counts[0 if counts[0] else 1] -= 1  # leave at least one unit visible
        for units, k in zip((time_units, freq_units), counts):
            for u in rng.choice(len(units), size=k, replace=False) if units else []:
                dropped.extend(units[u])
    elif sampling == "bernoulli":
        units = time_units + freq_units
        hit = rng.uniform(size=len(units)) <= r
        if hit.all():
            hit[rng.integers(len(units))] = False  # leave at least one unit visible
        for u in np.flatnonzero(hit):
            dropped.extend(units[u])
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    dropped_arr = np.array(sorted(dropped), dtype=np.int64)
    kept = np.setdiff1d(ps.positions, dropped_arr)
    return DropPlan(kept, dropped_arr, r, mode, seed if isinstance(seed, (int, np.integer)) else None, sampling)


def _check_plan(ps: PatchSet, plan: DropPlan) -> None:
    covered = np.union1d(plan.kept, plan.dropped)
    if not np.array_equal(covered, np.sort(ps.positions)):
        raise ValueError("drop plan does not partition the patch set")


def apply_drop(ps: PatchSet, plan: DropPlan) -> PatchSet:
    if plan.mode != "drop":
        raise ValueError("apply_drop needs a plan in drop mode")
    _check_plan(ps, plan)
    keep = np.isin(ps.positions, plan.kept)
    return PatchSet(ps.values[keep], ps.positions[keep], ps.domains[keep], ps.layout)


def apply_mask(ps: PatchSet, plan: DropPlan) -> PatchSet:
    if plan.mode != "mask":
        raise ValueError("apply_mask needs a plan in mask mode")
    _check_plan(ps, plan)
    values = ps.values.copy()
    values[np.isin(ps.positions, plan.dropped)] = 0.0
    return PatchSet(values, ps.positions.copy(), ps.domains.copy(), ps.layout)


@dataclass
class CurriculumConfig:
    r_min: float = 0.3
    r_max: float = 0.8
    n_epoch: int = 300

    def __post_init__(self):
        if not (0 < self.r_min <= self.r_max < 1):
            raise ValueError("need 0 < r_min <= r_max < 1")
        if self.n_epoch < 1:
            raise ValueError("n_epoch must be positive")


def curriculum_ratio(cfg: CurriculumConfig, epoch: int) -> float:
    """r_i = max(r_min, min(r_max, i / n_epoch))."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return max(cfg.r_min, min(cfg.r_max, epoch / cfg.n_epoch))


# Table of per-dataset defaults: patch length and curriculum.
DATASET_PRESETS = {
    "ptbxl": dict(patch_len=20, curriculum=CurriculumConfig(0.3, 0.6, 200)),
    "har": dict(patch_len=8, curriculum=CurriculumConfig(0.3, 0.8, 300)),
    "sleepedf": dict(patch_len=20, curriculum=CurriculumConfig(0.3, 0.85, 300)),
}


@dataclass
class BatchPlan:
    """Drop plans for a batch, as padded index matrices for gathering."""

    kept: np.ndarray  # (B, K_max) patch indices, padded with 0
    kept_mask: np.ndarray  # (B, K_max) True where the entry is real
    dropped: list[np.ndarray] = field(default_factory=list)

    @property
    def counts(self) -> np.ndarray:
        return self.kept_mask.sum(axis=1)


def batch_plan(layout: PatchLayout, batch: int, r: float, seed: int, keys: tuple[int, ...] = (),
               domains=ALL_DOMAINS, mode: str = "drop", sampling: str = "exact") -> BatchPlan:
    """Per-sample plans over the patches of ``domains``; r == 0 keeps everything.

    Sample b draws from a generator derived from (seed, *keys, b) so plans do
    not depend on batch composition order.
    """
    positions = np.concatenate([layout.indices(d) for d in domains])
    ps = PatchSet(np.zeros((len(positions), 1, layout.patch_len)), positions,
                  layout.domains[positions], layout)
    kept_lists, dropped = [], []
    for b in range(batch):
        if r == 0:
            kept, drop = positions.copy(), np.array([], dtype=np.int64)
        else:
            plan = sample_drop_plan(ps, r, derive_seed(seed, *keys, b), mode, sampling)
            kept, drop = plan.kept, plan.dropped
        if mode == "mask":
            kept = np.sort(positions)
        kept_lists.append(np.sort(kept))
        dropped.append(drop)
    K = max(len(k) for k in kept_lists)
    idx = np.zeros((batch, K), dtype=np.int64)
    mask = np.zeros((batch, K), dtype=bool)
    for b, k in enumerate(kept_lists):
        idx[b, :len(k)] = k
        mask[b, :len(k)] = True
    return BatchPlan(idx, mask, dropped)
