"""Dual-network training with per-subject small-loss selection and cross-updates.

Each iteration draws a subject-stratified mini-batch (b samples from every
source subject, B = b*N total). Both networks rank subjects by their summed
per-sample loss over the batch, keep the ceil(R(T)*N) smallest-loss subjects,
and each network is then updated on the subjects its peer selected. R(T)
decays from 1 toward 1 - tau over the first t_k epochs and stays flat after,
so the pair gradually stops learning from consistently high-loss subjects.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .metrics import evaluate_balanced_accuracy
from .models import Model, ModelConfig, build_mini_resnet1d, per_sample_losses
from .optim import AdamState, CosineSchedule, adam_step, cosine_lr, sgd_step
from .seeding import derive_seed
from .tensor import Tape, Tensor, softmax_cross_entropy


@dataclass(frozen=True)
class CoteachConfig:
    tau: float = 0.2
    t_k: int = 10
    t_max: int = 30
    m_max: int | None = None  # default: one pass over the scarcest subject
    b: int = 8
    lr: float = 0.01
    min_lr: float = 0.0
    optimizer: str = "adam"  # "sgd" exists for closed-form single-step checks
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValidationError(f"coteach.tau must be in [0, 1), got {self.tau}")
        for name in ("t_k", "t_max", "b"):
            if getattr(self, name) < 1:
                raise ValidationError(f"coteach.{name} must be positive, got {getattr(self, name)}")
        if self.m_max is not None and self.m_max < 1:
            raise ValidationError(f"coteach.m_max must be positive, got {self.m_max}")
        if not self.lr > 0:
            raise ValidationError(f"coteach.lr must be > 0, got {self.lr}")
        if self.min_lr < 0 or self.min_lr > self.lr:
            raise ValidationError(f"coteach.min_lr must be in [0, lr], got {self.min_lr}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"coteach.optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class SubjectBatch:
    """One stratified mini-batch: b consecutive samples per subject, ordered by id."""

    subject_ids: tuple[int, ...]
    trials: Tensor  # [N*b, E, T]
    labels: np.ndarray  # [N*b]
    b: int

    def __post_init__(self):
        if list(self.subject_ids) != sorted(self.subject_ids):
            raise ValidationError("subject_ids must be ascending")
        expected = self.b * len(self.subject_ids)
        if self.trials.shape[0] != expected or self.labels.shape[0] != expected:
            raise ValidationError(
                f"batch must hold b*N = {expected} samples, got {self.trials.shape[0]}"
            )

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def total_samples(self) -> int:
        return self.b * self.n_subjects

    def subset(self, positions) -> tuple[Tensor, np.ndarray]:
        """Samples of the subjects at the given positions, in position order."""
        rows = np.concatenate([np.arange(p * self.b, (p + 1) * self.b) for p in positions])
        return Tensor(self.trials.data[rows], check_finite=False), self.labels[rows]


class SubjectBatcher:
    """Draws stratified batches without replacement per subject, refilling cyclically.

    Each subject's samples are consumed from a seeded permutation; a fresh
    permutation is appended whenever fewer than b indices remain, so one
    epoch pass covers the subject's dataset exactly before any repeat.
    """

    def __init__(self, datasets, b: int, rng: np.random.Generator):
        if not datasets:
            raise ValidationError("batcher requires a nonempty training set")
        if b < 1:
            raise ValidationError(f"subject-wise batch size must be positive, got {b}")
        self._datasets = sorted(datasets, key=lambda ds: ds.subject_id)
        ids = [ds.subject_id for ds in self._datasets]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate subject ids in training set: {ids}")
        self.subject_ids = tuple(ids)
        self.b = b
        self._rng = rng
        self._queues: list[list[int]] = [[] for _ in self._datasets]

    def next_batch(self) -> SubjectBatch:
        chunks = []
        labels = []
        for i, ds in enumerate(self._datasets):
            queue = self._queues[i]
            while len(queue) < self.b:
                queue.extend(self._rng.permutation(ds.n_trials).tolist())
            take, self._queues[i] = queue[:self.b], queue[self.b:]
            chunks.append(ds.trials.data[take])
            labels.append(ds.labels[take])
        return SubjectBatch(
            subject_ids=self.subject_ids,
            trials=Tensor(np.concatenate(chunks), check_finite=False),
            labels=np.concatenate(labels),
            b=self.b,
        )


@dataclass
class SelectionRecord:
    """Outcome of one network's subject ranking within one iteration."""

    epoch: int
    iteration: int
    net: str
    loss_sums: list[float]
    selected: list[int]  # subject ids, ascending
    remember_rate: float
    subject_ids: tuple[int, ...] = ()  # batch universe; not part of the JSONL schema

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch,
            "iter": self.iteration,
            "net": self.net,
            "loss_sums": self.loss_sums,
            "selected": self.selected,
            "R": self.remember_rate,
        })


@dataclass
class CoteachState:
    model_f: Model
    model_g: Model
    adam_f: AdamState
    adam_g: AdamState
    optimizer: str = "adam"
    epoch: int = 0
    selection_log: list[SelectionRecord] = field(default_factory=list)


def init_coteach_state(model_config: ModelConfig, config: CoteachConfig) -> CoteachState:
    """Two architecturally identical networks with independently derived init seeds."""
    model_f = build_mini_resnet1d(replace(model_config, seed=derive_seed(config.seed, "model-f")))
    model_g = build_mini_resnet1d(replace(model_config, seed=derive_seed(config.seed, "model-g")))
    return CoteachState(
        model_f=model_f,
        model_g=model_g,
        adam_f=AdamState.for_params(model_f.parameters()),
        adam_g=AdamState.for_params(model_g.parameters()),
        optimizer=config.optimizer,
    )


def remember_rate(t: int, t_k: int, tau: float) -> float:
    """R(T) = 1 - min(T/T_k * tau, tau): linear decay to 1 - tau, then flat."""
    if t < 0:
        raise ValidationError(f"epoch index must be >= 0, got {t}")
    if t_k < 1:
        raise ValidationError(f"t_k must be positive, got {t_k}")
    if not 0.0 <= tau < 1.0:
        raise ValidationError(f"tau must be in [0, 1), got {tau}")
    return 1.0 - min(t / t_k * tau, tau)


def per_subject_loss_sums(model: Model, batch: SubjectBatch) -> np.ndarray:
    """Summed cross-entropy per subject over its b samples; no gradient side effects."""
    losses = per_sample_losses(model, batch.trials, batch.labels)
    return losses.reshape(batch.n_subjects, batch.b).sum(axis=1)


def select_small_loss_subjects(sums, r: float) -> list[int]:
    """Positions of the ceil(r*N) smallest loss sums, ties to the lower index, ascending."""
    sums = np.asarray(sums, dtype=np.float64)
    if sums.ndim != 1 or sums.size == 0:
        raise ValidationError("loss sums must be a nonempty vector")
    if not 0.0 < r <= 1.0:
        raise ValidationError(f"remember rate must be in (0, 1], got {r}")
    k = min(math.ceil(r * sums.size), sums.size)
    order = np.argsort(sums, kind="stable")
    return sorted(int(i) for i in order[:k])


def apply_update(model: Model, opt_state: AdamState, trials: Tensor, labels,
                 lr: float, optimizer: str = "adam") -> float:
    """One mean-cross-entropy gradient step on the given samples; returns the mean loss."""
    tape = Tape()
    logits = model.forward(trials, tape)
    losses, grad = softmax_cross_entropy(logits, labels)
    tape.backward(grad.data / labels.shape[0], output=logits)
    params = model.parameters()
    grads = [tape.grad(p) if tape.grad(p) is not None else np.zeros_like(p.data) for p in params]
    if optimizer == "adam":
        adam_step(params, grads, opt_state, lr)
    else:
        sgd_step(params, grads, lr)
    return float(losses.data.mean())


def cross_update_step(state: CoteachState, batch: SubjectBatch, lr: float, r: float,
                      epoch: int = 0, iteration: int = 0) -> tuple[SelectionRecord, SelectionRecord]:
    """Select per network from pre-update losses, then update each on its peer's pick.

    Both rankings are computed before either parameter set moves, so network
    g's update set cannot leak the f update made in the same iteration.
    """
    sums_f = per_subject_loss_sums(state.model_f, batch)
    sums_g = per_subject_loss_sums(state.model_g, batch)
    pos_f = select_small_loss_subjects(sums_f, r)
    pos_g = select_small_loss_subjects(sums_g, r)

    ids = batch.subject_ids
    rec_f = SelectionRecord(epoch, iteration, "f", [float(s) for s in sums_f],
                            [ids[p] for p in pos_f], r, subject_ids=ids)
    rec_g = SelectionRecord(epoch, iteration, "g", [float(s) for s in sums_g],
                            [ids[p] for p in pos_g], r, subject_ids=ids)

    trials_g, labels_g = batch.subset(pos_g)  # g's picks feed f
    trials_f, labels_f = batch.subset(pos_f)  # f's picks feed g
    apply_update(state.model_f, state.adam_f, trials_g, labels_g, lr, state.optimizer)
    apply_update(state.model_g, state.adam_g, trials_f, labels_f, lr, state.optimizer)

    state.selection_log.append(rec_f)
    state.selection_log.append(rec_g)
    return rec_f, rec_g


@dataclass
class Checkpoint:
    model: Model
    net: str
    epoch: int
    balanced_accuracy: float


@dataclass
class EpochStats:
    epoch: int
    remember_rate: float
    lr: float
    val_accuracy: dict[str, float]


@dataclass
class RunLogs:
    selection_records: list[SelectionRecord]
    epoch_stats: list[EpochStats]
    m_max: int


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    logs: RunLogs


def default_m_max(train, b: int) -> int:
    """Iterations per epoch: one pass over the scarcest subject's trials."""
    return max(1, min(ds.n_trials for ds in train) // b)


def train_coteaching(train, val, model_config: ModelConfig, config: CoteachConfig,
                     epoch_callback=None) -> TrainResult:
    """Full co-teaching run; returns the best-validation network and all logs.

    The best checkpoint is the (network, epoch) pair with the highest
    validation balanced accuracy; network f wins exact ties within an epoch
    and earlier epochs win ties across epochs.
    """
    if not train or not val:
        raise ValidationError("training and validation sets must both be nonempty")
    m_max = config.m_max if config.m_max is not None else default_m_max(train, config.b)
    state = init_coteach_state(model_config, config)
    batcher = SubjectBatcher(train, config.b,
                             np.random.default_rng(np.random.PCG64(derive_seed(config.seed, "batches"))))
    sched = CosineSchedule(config.lr, config.min_lr, config.t_max)

    best: Checkpoint | None = None
    epoch_stats: list[EpochStats] = []
    for t in range(1, config.t_max + 1):
        r = remember_rate(t, config.t_k, config.tau)
        lr = cosine_lr(t - 1, sched)
        for it in range(1, m_max + 1):
            batch = batcher.next_batch()
            cross_update_step(state, batch, lr, r, epoch=t, iteration=it)
        state.epoch = t

        accs = {
            "f": evaluate_balanced_accuracy(state.model_f, val, model_config.n_classes),
            "g": evaluate_balanced_accuracy(state.model_g, val, model_config.n_classes),
        }
        epoch_stats.append(EpochStats(epoch=t, remember_rate=r, lr=lr, val_accuracy=accs))
        for net in ("f", "g"):
            if best is None or accs[net] > best.balanced_accuracy:
                model = state.model_f if net == "f" else state.model_g
                best = Checkpoint(model=model.clone(), net=net, epoch=t,
                                  balanced_accuracy=accs[net])
        if epoch_callback is not None:
            epoch_callback(t, {"f": state.model_f, "g": state.model_g})

    assert best is not None
    return TrainResult(checkpoint=best,
                       logs=RunLogs(selection_records=state.selection_log,
                                    epoch_stats=epoch_stats, m_max=m_max))


def write_selection_log(records, path) -> None:
    """One JSON object per line: {epoch, iter, net, loss_sums, selected, R}."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


def read_selection_log(path) -> list[SelectionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(SelectionRecord(
                epoch=obj["epoch"], iteration=obj["iter"], net=obj["net"],
                loss_sums=obj["loss_sums"], selected=obj["selected"],
                remember_rate=obj["R"],
            ))
    return records
