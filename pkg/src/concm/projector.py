"""Feature-to-geometry projector, its losses, and per-session training.

The projector is a two-layer MLP wrapped in L2 normalization on both
sides, so it maps the feature hypersphere onto the geometric hypersphere.
Training minimizes a matching loss (softmax cross-entropy of projected
vectors against the structure columns) plus a supervised contrastive loss
with temperature tau, where samples of anchored classes get their class's
structure column appended to the positive set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .autodiff import Tape
from .errors import (DegenerateBatch, DegenerateInput, InvalidConfig,
                     InvalidInput, LabelOutOfRange, TrainingDiverged)
from .optim import cosine_lr
from .structure import StructureMatrix

logger = logging.getLogger("concm.projector")


@dataclass
class ProjectorParams:
    w1: np.ndarray  # (d_f, d_hidden)
    b1: np.ndarray  # (1, d_hidden)
    w2: np.ndarray  # (d_hidden, d_g)
    b2: np.ndarray  # (1, d_g)

    @property
    def d_f(self) -> int:
        return self.w1.shape[0]

    @property
    def d_g(self) -> int:
        return self.w2.shape[1]


_PARAM_FIELDS = ("w1", "b1", "w2", "b2")


def init_projector_params(d_f: int, d_hidden: int, d_g: int,
                          seed: int = 0) -> ProjectorParams:
    def w(name, shape):
        return rng.gaussian(rng.stream(seed, "projector-init", name), shape) \
            / math.sqrt(shape[0])
    return ProjectorParams(w1=w("w1", (d_f, d_hidden)),
                           b1=np.zeros((1, d_hidden)),
                           w2=w("w2", (d_hidden, d_g)),
                           b2=np.zeros((1, d_g)))


def _register(tape: Tape, params: ProjectorParams) -> dict[str, int]:
    return {n: tape.param(n, getattr(params, n)) for n in _PARAM_FIELDS}


def projection_nodes(tape: Tape, pnodes: dict[str, int], x_node: int) -> int:
    """normalize -> linear -> softplus -> linear -> normalize."""
    xn = tape.l2_normalize(x_node)
    h = tape.softplus(tape.add(tape.matmul(xn, pnodes["w1"]), pnodes["b1"]))
    return tape.l2_normalize(tape.add(tape.matmul(h, pnodes["w2"]), pnodes["b2"]))


def project(params: ProjectorParams, x: np.ndarray) -> np.ndarray:
    """Unit-norm projection of one feature vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = x.reshape(1, -1) if single else x
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateInput("cannot project a zero-norm feature vector")
    tape = Tape()
    pnodes = _register(tape, params)
    z = projection_nodes(tape, pnodes, tape.constant(rows))
    tape.forward({})
    out = tape.value(z)
    return out.ravel() if single else out


@dataclass
class TrainBatch:
    """One training batch: features, labels, and the anchored class set."""

    features: np.ndarray
    labels: np.ndarray
    anchored_classes: frozenset[int] = field(default_factory=frozenset)


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")


def build_matching_loss(tape: Tape, z_node: int, labels: np.ndarray,
                        structure: StructureMatrix) -> int:
    """Mean softmax cross-entropy of <z, column_j> logits at each label."""
    n = structure.num_classes
    _check_labels(labels, n)
    logits = tape.matmul(z_node, tape.constant(structure.columns))
    ls = tape.log_softmax(logits, axis=1)
    onehot = np.zeros((labels.size, n))
    onehot[np.arange(labels.size), labels] = 1.0
    picked = tape.sum(tape.mul(ls, tape.constant(onehot)), axis=1)
    return tape.scale(tape.mean(picked), -1.0)


def matching_loss(z: np.ndarray, labels, structure: StructureMatrix) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    tape = Tape()
    loss = build_matching_loss(tape, tape.constant(z), labels, structure)
    tape.forward({})
    return float(tape.value(loss))


def build_contrastive_loss(tape: Tape, z_node: int, labels: np.ndarray,
                           structure: StructureMatrix,
                           anchored_classes: frozenset[int],
                           tau: float) -> int:
    """Supervised contrastive loss with structure anchors.

    For sample i, the positive set holds all other same-class samples, plus
    the class's structure column when the class is anchored; the
    denominator runs over every other sample plus the sample's own anchor.
    Raises DegenerateBatch if any sample ends up with no positives.
    """
    if tau <= 0.0:
        raise InvalidConfig(f"temperature must be positive, got {tau}")
    b = labels.size
    _check_labels(labels, structure.num_classes)
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(b, dtype=bool)
    pos_s = (same & off_diag).astype(np.float64)
    allow_s = off_diag.astype(np.float64)

    anchored = sorted(set(anchored_classes) & set(labels.tolist()))
    pos_counts = pos_s.sum(axis=1)
    sims = tape.scale(tape.matmul(z_node, tape.transpose(z_node)), 1.0 / tau)
    denom = tape.sum(tape.mul(tape.exp(sims), tape.constant(allow_s)), axis=1)
    pos_sum = tape.sum(tape.mul(sims, tape.constant(pos_s)), axis=1)

    if anchored:
        cols = structure.columns[:, anchored]          # (d_g, n_a)
        own = (labels[:, None] == np.asarray(anchored)[None, :]).astype(np.float64)
        asims = tape.scale(tape.matmul(z_node, tape.constant(cols)), 1.0 / tau)
        denom = tape.add(denom, tape.sum(tape.mul(tape.exp(asims),
                                                  tape.constant(own)), axis=1))
        pos_sum = tape.add(pos_sum, tape.sum(tape.mul(asims, tape.constant(own)),
                                             axis=1))
        pos_counts = pos_counts + own.sum(axis=1)

    if np.any(pos_counts == 0):
        bad = labels[pos_counts == 0]
        raise DegenerateBatch(f"empty positive set for labels {sorted(set(bad.tolist()))}")
    inv = tape.constant((1.0 / pos_counts).reshape(-1, 1))
    per_sample = tape.sub(tape.log(denom), tape.mul(pos_sum, inv))
    return tape.mean(per_sample)


def contrastive_loss(batch: TrainBatch, structure: StructureMatrix,
                     tau: float) -> float:
    z = np.asarray(batch.features, dtype=np.float64)
    labels = np.asarray(batch.labels, dtype=np.int64)
    if labels.size == 0:
        raise DegenerateBatch("empty batch")
    tape = Tape()
    loss = build_contrastive_loss(tape, tape.constant(z), labels, structure,
                                  batch.anchored_classes, tau)
    tape.forward({})
    return float(tape.value(loss))


@dataclass
class TrainSchedule:
    lr_max: float = 1e-2
    epochs: int = 50
    warmup_steps: int = 10
    batch_size: int = 128
    seed: int = 0


def _balanced_batches(labels: np.ndarray, batch_size: int, seed: int, epoch: int,
                      anchored: frozenset[int]) -> list[np.ndarray]:
    """Class-balanced batches; drops samples whose class would appear once
    in a batch without an anchor (the contrastive loss needs a positive)."""
    gen = rng.stream(seed, "batches", epoch)
    classes = np.unique(labels)
    order = classes[rng.permutation(gen, classes.size)]
    streams = {c: np.flatnonzero(labels == c)[rng.permutation(
        gen, int((labels == c).sum()))] for c in order}
    interleaved: list[int] = []
    cursors = {c: 0 for c in order}
    remaining = sum(s.size for s in streams.values())
    while remaining:
        for c in order:
            if cursors[c] < streams[c].size:
                interleaved.append(int(streams[c][cursors[c]]))
                cursors[c] += 1
                remaining -= 1
    batches = []
    for start in range(0, len(interleaved), batch_size):
        idx = np.asarray(interleaved[start:start + batch_size])
        batch_labels = labels[idx]
        uniq, counts = np.unique(batch_labels, return_counts=True)
        lonely = {int(c) for c, n in zip(uniq, counts)
                  if n == 1 and int(c) not in anchored}
        if lonely:
            keep = ~np.isin(batch_labels, sorted(lonely))
            idx = idx[keep]
        if idx.size >= 2:
            batches.append(idx)
    return batches


def train_projector(params: ProjectorParams, structure: StructureMatrix,
                    anchored_classes: frozenset[int], schedule: TrainSchedule,
                    epoch_data, tau: float = 0.07) -> tuple[ProjectorParams, list[float]]:
    """Optimize the projector against a structure.

    ``epoch_data(epoch)`` returns the (features, labels) arrays to train on
    during that epoch (augmented samples are redrawn each epoch by the
    caller).  Returns updated parameters and the per-epoch mean loss.
    """
    params = ProjectorParams(**{n: getattr(params, n).copy() for n in _PARAM_FIELDS})
    first_x, first_y = epoch_data(0)
    steps_per_epoch = max(1, math.ceil(first_y.size / schedule.batch_size))
    total_steps = schedule.epochs * steps_per_epoch
    step = 0
    trace: list[float] = []
    for epoch in range(schedule.epochs):
        x, y = (first_x, first_y) if epoch == 0 else epoch_data(epoch)
        y = np.asarray(y, dtype=np.int64)
        epoch_losses = []
        for idx in _balanced_batches(y, schedule.batch_size, schedule.seed,
                                     epoch, anchored_classes):
            try:
                tape = Tape()
                pnodes = _register(tape, params)
                z = projection_nodes(tape, pnodes, tape.constant(x[idx]))
                match = build_matching_loss(tape, z, y[idx], structure)
                cont = build_contrastive_loss(tape, z, y[idx], structure,
                                              anchored_classes, tau=tau)
                loss = tape.add(match, cont)
                tape.forward({})
            except InvalidInput as exc:
                raise TrainingDiverged(f"non-finite state at step {step}: {exc}") \
                    from exc
            value = float(tape.value(loss))
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at step {step}")
            grads = tape.backward(loss)
            lr = cosine_lr(step, total_steps, schedule.lr_max,
                           schedule.warmup_steps)
            for name, g in grads.items():
                setattr(params, name, tape.param_value(name) - lr * g)
            epoch_losses.append(value)
            step += 1
        trace.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
    logger.info("projector: %d epochs, loss %.4f -> %.4f", schedule.epochs,
                trace[0] if trace else float("nan"),
                trace[-1] if trace else float("nan"))
    return params, trace
