"""Synthetic multi-subject cohorts, rest-class augmentation, splits, and raw file I/O.

Cohort model: each imagery class has a global template built from a few
class-distinct sinusoids mixed across channels; every subject adds a fixed
low-frequency offset pattern; trials are template + offset + white noise.
The rest distribution is the same construction without any class template.
Subjects listed in ``noisy_subject_ids`` draw their imagery trials from the
rest distribution while keeping imagery labels, i.e. their recordings carry
no class signal at all.

Everything is a pure function of the config (including its seed): per-subject
and per-class streams derive from the seed, so generation order never matters.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, ValidationError
from .seeding import derive_seed
from .tensor import Tensor

RAW_MAGIC = b"CTSS"
RAW_VERSION = 1

_TEMPLATE_COMPONENTS = 3
_OFFSET_COMPONENTS = 2


@dataclass
class SubjectDataset:
    """One subject's labeled trials plus the noisy-flag ground truth."""

    subject_id: int
    trials: Tensor  # [n_trials, E, T]
    labels: np.ndarray  # int64 [n_trials]
    is_noisy: bool = False
    session_id: int = 0

    def __post_init__(self):
        if self.trials.ndim != 3:
            raise ValidationError(f"trials must be [n, E, T], got shape {tuple(self.trials.shape)}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.trials.shape[0],):
            raise ValidationError(
                f"subject {self.subject_id}: {self.trials.shape[0]} trials but "
                f"{self.labels.shape[0]} labels"
            )
        if self.n_trials < 1:
            raise ValidationError(f"subject {self.subject_id} has no trials")
        if self.labels.min() < 0:
            raise ValidationError(f"subject {self.subject_id}: negative label")

    @property
    def n_trials(self) -> int:
        return self.trials.shape[0]


@dataclass(frozen=True)
class GeneratorConfig:
    n_subjects: int = 10
    n_imagery_classes: int = 2
    trials_per_class: int = 24
    n_electrodes: int = 4
    n_timesteps: int = 750
    snr: float = 2.0
    subject_shift_scale: float = 0.5
    noisy_subject_ids: tuple[int, ...] = ()
    noise_mode: str = "rest"  # "rest": imagery trials become template-free;
    #                           "label_shuffle": real trials, permuted labels
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "n_imagery_classes", "trials_per_class", "n_electrodes", "n_timesteps"):
            if getattr(self, name) < 1:
                raise ValidationError(f"generator.{name} must be positive, got {getattr(self, name)}")
        if not self.snr > 0:
            raise ValidationError(f"generator.snr must be > 0, got {self.snr}")
        if self.subject_shift_scale < 0:
            raise ValidationError(f"generator.subject_shift_scale must be >= 0, got {self.subject_shift_scale}")
        if self.noise_mode not in ("rest", "label_shuffle"):
            raise ValidationError(
                f"generator.noise_mode must be 'rest' or 'label_shuffle', got {self.noise_mode!r}")
        bad = [i for i in self.noisy_subject_ids if not 0 <= i < self.n_subjects]
        if bad:
            raise ValidationError(f"generator.noisy_subject_ids {bad} outside 0..{self.n_subjects - 1}")
        object.__setattr__(self, "noisy_subject_ids", tuple(sorted(set(self.noisy_subject_ids))))


def _unit_rms(pattern: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(pattern ** 2))
    return pattern / rms if rms > 0 else pattern


def _sinusoid_mixture(rng: np.random.Generator, freqs: np.ndarray, n_electrodes: int,
                      n_timesteps: int) -> np.ndarray:
    """Channel-mixed sum of sinusoids at the given cycles-per-window, unit RMS."""
    t = np.arange(n_timesteps) / n_timesteps
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(freqs))
    waves = np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])
    mixing = rng.normal(0.0, 1.0, size=(n_electrodes, len(freqs)))
    return _unit_rms(mixing @ waves)


def class_template(config: GeneratorConfig, class_index: int) -> np.ndarray:
    """Global [E, T] pattern for one imagery class; classes use disjoint frequency sets."""
    rng = np.random.default_rng(np.random.PCG64(derive_seed(config.seed, "template", class_index)))
    base = 4.0 + 3.0 * class_index
    freqs = base + np.arange(_TEMPLATE_COMPONENTS, dtype=np.float64)
    return _sinusoid_mixture(rng, freqs, config.n_electrodes, config.n_timesteps)


def subject_offset(config: GeneratorConfig, subject_id: int) -> np.ndarray:
    """Per-subject [E, T] drift pattern, scaled by subject_shift_scale."""
    rng = np.random.default_rng(np.random.PCG64(derive_seed(config.seed, "offset", subject_id)))
    freqs = rng.uniform(0.5, 2.0, size=_OFFSET_COMPONENTS)
    pattern = _sinusoid_mixture(rng, freqs, config.n_electrodes, config.n_timesteps)
    return config.subject_shift_scale * pattern


def generate_cohort(config: GeneratorConfig) -> list[SubjectDataset]:
    """Imagery-labeled datasets for all subjects (rest trials come from augmentation)."""
    templates = [class_template(config, c) for c in range(config.n_imagery_classes)]
    sigma = 1.0 / config.snr
    cohort = []
    for sid in range(config.n_subjects):
        offset = subject_offset(config, sid)
        noisy = sid in config.noisy_subject_ids
        rng = np.random.default_rng(np.random.PCG64(derive_seed(config.seed, "trials", sid)))
        n = config.n_imagery_classes * config.trials_per_class
        trials = np.empty((n, config.n_electrodes, config.n_timesteps), dtype=np.float64)
        labels = np.empty(n, dtype=np.int64)
        drop_template = noisy and config.noise_mode == "rest"
        row = 0
        for c in range(config.n_imagery_classes):
            for _ in range(config.trials_per_class):
                noise = rng.normal(0.0, sigma, size=offset.shape)
                signal = offset + noise if drop_template else templates[c] + offset + noise
                trials[row] = signal
                labels[row] = c
                row += 1
        if noisy and config.noise_mode == "label_shuffle":
            labels = labels[rng.permutation(n)]
        cohort.append(SubjectDataset(subject_id=sid, trials=Tensor(trials), labels=labels,
                                     is_noisy=noisy, session_id=0))
    return cohort


def augment_rest_class(ds: SubjectDataset, config: GeneratorConfig) -> SubjectDataset:
    """Append one freshly drawn rest trial per existing trial, labeled n_imagery_classes.

    Doubles the trial count and adds one class. Original trials are carried
    over bitwise. Rejects datasets that already contain rest labels.
    """
    rest_label = config.n_imagery_classes
    if ds.labels.max() >= rest_label:
        raise ValidationError(
            f"subject {ds.subject_id} already contains rest-class labels; refusing to augment twice"
        )
    offset = subject_offset(config, ds.subject_id)
    sigma = 1.0 / config.snr
    rng = np.random.default_rng(np.random.PCG64(derive_seed(config.seed, "rest", ds.subject_id)))
    n = ds.n_trials
    rest = offset[None, :, :] + rng.normal(0.0, sigma, size=(n,) + offset.shape)
    trials = np.concatenate([ds.trials.data, rest], axis=0)
    labels = np.concatenate([ds.labels, np.full(n, rest_label, dtype=np.int64)])
    return SubjectDataset(subject_id=ds.subject_id, trials=Tensor(trials), labels=labels,
                          is_noisy=ds.is_noisy, session_id=ds.session_id)


def loso_split(cohort: list[SubjectDataset], target_subject_id: int) -> tuple[list[SubjectDataset], SubjectDataset]:
    """All-but-target as source (order preserved) and the target as test."""
    if len(cohort) < 2:
        raise ValidationError("leave-one-subject-out requires at least 2 subjects")
    ids = [ds.subject_id for ds in cohort]
    if target_subject_id not in ids:
        raise ValidationError(f"subject {target_subject_id} not in cohort {ids}")
    source = [ds for ds in cohort if ds.subject_id != target_subject_id]
    test = cohort[ids.index(target_subject_id)]
    return source, test


def train_val_split(source: list[SubjectDataset], ratio: float, seed: int
                    ) -> tuple[list[SubjectDataset], list[SubjectDataset]]:
    """Per-subject, class-stratified trial split; both sides keep every subject and class."""
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must be in (0, 1), got {ratio}")
    if not source:
        raise ValidationError("train_val_split requires a nonempty source list")
    train, val = [], []
    for ds in source:
        rng = np.random.default_rng(np.random.PCG64(derive_seed(seed, "split", ds.subject_id)))
        train_idx, val_idx = [], []
        for cls in np.unique(ds.labels):
            idx = np.flatnonzero(ds.labels == cls)
            if idx.size < 2:
                raise ValidationError(
                    f"subject {ds.subject_id} class {int(cls)} has {idx.size} trial(s); "
                    "need at least 2 to split"
                )
            perm = rng.permutation(idx)
            n_train = min(max(int(ratio * idx.size), 1), idx.size - 1)
            train_idx.extend(perm[:n_train])
            val_idx.extend(perm[n_train:])
        train.append(_subset(ds, np.sort(np.asarray(train_idx))))
        val.append(_subset(ds, np.sort(np.asarray(val_idx))))
    return train, val


def _subset(ds: SubjectDataset, idx: np.ndarray) -> SubjectDataset:
    return SubjectDataset(subject_id=ds.subject_id, trials=Tensor(ds.trials.data[idx]),
                          labels=ds.labels[idx], is_noisy=ds.is_noisy, session_id=ds.session_id)


# ---------------------------------------------------------------------------
# raw cohort files


def save_raw(cohort: list[SubjectDataset], path) -> None:
    """Write the cohort: magic, version, subject count, then CRC-tailed subject blocks."""
    if not cohort:
        raise ValidationError("refusing to write an empty cohort")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<HI", RAW_VERSION, len(cohort)))
        for ds in cohort:
            n, e, t = ds.trials.shape
            if ds.labels.max(initial=0) > 0xFFFF:
                raise ValidationError(f"subject {ds.subject_id}: labels exceed u16 range")
            block = struct.pack("<IBIII", ds.subject_id, int(ds.is_noisy), n, e, t)
            block += ds.labels.astype("<u2").tobytes()
            block += np.ascontiguousarray(ds.trials.data, dtype="<f8").tobytes()
            fh.write(block)
            fh.write(struct.pack("<I", zlib.crc32(block) & 0xFFFFFFFF))


def load_raw(path) -> list[SubjectDataset]:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if len(view) < 10:
        raise DataFormatError(f"{path}: file truncated (no header)")
    if bytes(view[:4]) != RAW_MAGIC:
        raise DataFormatError(f"{path}: not a cohort file (bad magic)")
    version, n_subjects = struct.unpack_from("<HI", view, 4)
    if version != RAW_VERSION:
        raise DataFormatError(f"{path}: unsupported cohort version {version}")
    offset = 10
    cohort = []
    for _ in range(n_subjects):
        header_end = offset + struct.calcsize("<IBIII")
        if header_end > len(view):
            raise DataFormatError(f"{path}: file truncated in subject header")
        sid, noisy, n, e, t = struct.unpack_from("<IBIII", view, offset)
        block_len = (header_end - offset) + 2 * n + 8 * n * e * t
        if offset + block_len + 4 > len(view):
            raise DataFormatError(f"{path}: file truncated in subject {sid} payload")
        block = bytes(view[offset:offset + block_len])
        (crc_stored,) = struct.unpack_from("<I", view, offset + block_len)
        if zlib.crc32(block) & 0xFFFFFFFF != crc_stored:
            raise DataFormatError(f"{path}: checksum mismatch in subject {sid} block")
        cursor = header_end
        labels = np.frombuffer(view, dtype="<u2", count=n, offset=cursor).astype(np.int64)
        cursor += 2 * n
        data = np.frombuffer(view, dtype="<f8", count=n * e * t, offset=cursor)
        cohort.append(SubjectDataset(subject_id=sid, trials=Tensor(data.reshape(n, e, t).copy()),
                                     labels=labels, is_noisy=bool(noisy), session_id=0))
        offset += block_len + 4
    if offset != len(view):
        raise DataFormatError(f"{path}: {len(view) - offset} trailing bytes after last subject")
    return cohort


def cohorts_equal(a: list[SubjectDataset], b: list[SubjectDataset]) -> bool:
    """Bitwise equality over the persisted fields."""
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if (x.subject_id != y.subject_id or x.is_noisy != y.is_noisy
                or not np.array_equal(x.labels, y.labels)
                or not np.array_equal(x.trials.data, y.trials.data)):
            return False
    return True
