"""Prototype calibration network and its episodic training.

A few-shot prototype is calibrated by cross-attention over the attribute
pool: relevance scores combine a semantic term (word-embedding similarity
between attribute and class, scaled by 1/(2 sqrt(d_s))) and a visual term
(similarity between attribute prototype and class prototype, scaled by
1/(2 sqrt(d_f))), masked to the class's associated attributes.  The
encoder output of the prototype plus the softmax-weighted encoder outputs
of the associated attribute prototypes feed a linear decoder that emits
the calibrated prototype.

Training is episodic on base classes: every episode draws K shots per
class, and the network regresses the shot prototypes onto the exact base
means with an MSE objective.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .attributes import SemanticKnowledge
from .autodiff import Tape
from .data import FeatureSet
from .errors import AllMasked, InsufficientSamples, InvalidConfig, ShapeError
from .optim import cosine_lr, sgd_step

logger = logging.getLogger("concm.calibration")


@dataclass
class Prototype:
    """Class mean estimate. source is one of raw | calibrated | base-exact."""

    class_id: int
    class_name: str
    mean: np.ndarray
    source: str
    shot_count: int


@dataclass
class CalibrationParams:
    """Encoder/decoder and attention-map weights of the calibration net."""

    w_enc: np.ndarray   # (d_f, d_f // 2)
    b_enc: np.ndarray   # (1, d_f // 2)
    w_dec: np.ndarray   # (d_f // 2, d_f)
    b_dec: np.ndarray   # (1, d_f)
    g_sem_attr: np.ndarray  # (d_s, d_attn)
    g_sem_cls: np.ndarray   # (d_s, d_attn)
    g_vis_attr: np.ndarray  # (d_f, d_attn)
    g_vis_cls: np.ndarray   # (d_f, d_attn)

    @property
    def d_f(self) -> int:
        return self.w_enc.shape[0]

    @property
    def d_s(self) -> int:
        return self.g_sem_attr.shape[0]


_PARAM_FIELDS = ("w_enc", "b_enc", "w_dec", "b_dec",
                 "g_sem_attr", "g_sem_cls", "g_vis_attr", "g_vis_cls")


def init_calibration_params(d_f: int, d_s: int, d_attn: int | None = None,
                            seed: int = 0) -> CalibrationParams:
    """Seeded Gaussian init, scaled by 1/sqrt(fan_in); zero biases."""
    d_attn = d_s if d_attn is None else d_attn
    d_e = d_f // 2
    shapes = {
        "w_enc": (d_f, d_e), "b_enc": (1, d_e),
        "w_dec": (d_e, d_f), "b_dec": (1, d_f),
        "g_sem_attr": (d_s, d_attn), "g_sem_cls": (d_s, d_attn),
        "g_vis_attr": (d_f, d_attn), "g_vis_cls": (d_f, d_attn),
    }
    values = {}
    for name, shape in shapes.items():
        if name.startswith("b_"):
            values[name] = np.zeros(shape)
        else:
            gen = rng.stream(seed, "calibration-init", name)
            values[name] = rng.gaussian(gen, shape) / math.sqrt(shape[0])
    return CalibrationParams(**values)


def _register_params(tape: Tape, params: CalibrationParams) -> dict[str, int]:
    return {name: tape.param(name, getattr(params, name)) for name in _PARAM_FIELDS}


def _read_params(tape: Tape, params: CalibrationParams) -> CalibrationParams:
    return replace(params, **{name: tape.param_value(name) for name in _PARAM_FIELDS})


def _selected(knowledge: SemanticKnowledge, class_name: str) -> np.ndarray:
    col = knowledge.assoc.column(class_name)
    sel = np.flatnonzero(col)
    if sel.size == 0:
        raise AllMasked(f"class {class_name!r} has no associated pool attribute")
    return sel


def _calibration_nodes(tape: Tape, pnodes: dict[str, int], proto_node: int,
                       class_name: str, knowledge: SemanticKnowledge
                       ) -> tuple[int, int]:
    """Append the calibration subgraph; returns (score node, output node).

    The score node is (1, n_sel): relevance scores of the class's associated
    attributes in pool order.  The output node is the (1, d_f) calibrated
    prototype.
    """
    pool = knowledge.pool
    sel = _selected(knowledge, class_name)
    s_sel = tape.constant(pool.semantic[sel])
    f_sel = tape.constant(pool.visual[sel])
    s_cls = tape.constant(knowledge.class_semantic[class_name].reshape(1, -1))

    sem = tape.matmul(tape.matmul(s_sel, pnodes["g_sem_attr"]),
                      tape.transpose(tape.matmul(s_cls, pnodes["g_sem_cls"])))
    sem = tape.scale(sem, 1.0 / (2.0 * math.sqrt(pool.d_s)))
    vis = tape.matmul(tape.matmul(f_sel, pnodes["g_vis_attr"]),
                      tape.transpose(tape.matmul(proto_node, pnodes["g_vis_cls"])))
    vis = tape.scale(vis, 1.0 / (2.0 * math.sqrt(pool.d_f)))
    scores = tape.transpose(tape.add(sem, vis))        # (1, n_sel)

    weights = tape.softmax(scores, axis=1)
    enc_attr = tape.softplus(tape.add(tape.matmul(f_sel, pnodes["w_enc"]),
                                      pnodes["b_enc"]))
    enc_proto = tape.softplus(tape.add(tape.matmul(proto_node, pnodes["w_enc"]),
                                       pnodes["b_enc"]))
    agg = tape.add(enc_proto, tape.matmul(weights, enc_attr))
    out = tape.add(tape.matmul(agg, pnodes["w_dec"]), pnodes["b_dec"])
    return scores, out


def _check_dims(proto: Prototype, s_k: np.ndarray, knowledge: SemanticKnowledge,
                params: CalibrationParams) -> None:
    pool = knowledge.pool
    if proto.mean.shape != (pool.d_f,):
        raise ShapeError(f"prototype dim {proto.mean.shape} != pool d_f {pool.d_f}")
    if s_k.shape != (pool.d_s,):
        raise ShapeError(f"class embedding dim {s_k.shape} != pool d_s {pool.d_s}")
    if params.d_f != pool.d_f or params.d_s != pool.d_s:
        raise ShapeError("calibration params do not match the pool dimensions")


def relevance_weights(proto: Prototype, s_k: np.ndarray,
                      knowledge: SemanticKnowledge,
                      params: CalibrationParams) -> np.ndarray:
    """Masked relevance scores over the whole pool; masked entries are 0."""
    s_k = np.asarray(s_k, dtype=np.float64)
    _check_dims(proto, s_k, knowledge, params)
    kn = _scoped_knowledge(knowledge, proto.class_name, s_k)
    sel = _selected(kn, proto.class_name)
    tape = Tape()
    pnodes = _register_params(tape, params)
    p_node = tape.constant(proto.mean.reshape(1, -1))
    scores, _ = _calibration_nodes(tape, pnodes, p_node, proto.class_name, kn)
    tape.forward({})
    full = np.zeros(kn.pool.size)
    full[sel] = tape.value(scores).ravel()
    return full


def calibrate(proto: Prototype, s_k: np.ndarray, knowledge: SemanticKnowledge,
              params: CalibrationParams) -> Prototype:
    """Calibrated prototype via encode, attribute aggregation, decode."""
    s_k = np.asarray(s_k, dtype=np.float64)
    _check_dims(proto, s_k, knowledge, params)
    kn = _scoped_knowledge(knowledge, proto.class_name, s_k)
    tape = Tape()
    pnodes = _register_params(tape, params)
    p_node = tape.constant(proto.mean.reshape(1, -1))
    _, out = _calibration_nodes(tape, pnodes, p_node, proto.class_name, kn)
    tape.forward({})
    return replace(proto, mean=tape.value(out).ravel(), source="calibrated")


def _scoped_knowledge(knowledge: SemanticKnowledge, class_name: str,
                      s_k: np.ndarray) -> SemanticKnowledge:
    """Knowledge view where class_name's embedding is the supplied one."""
    merged = dict(knowledge.class_semantic)
    merged[class_name] = s_k
    return SemanticKnowledge(pool=knowledge.pool, class_semantic=merged,
                             assoc=knowledge.assoc)


def blend(raw: Prototype, calibrated: Prototype, alpha: float) -> Prototype:
    """Final prototype: alpha * raw + (1 - alpha) * calibrated."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfig(f"blend weight must be in [0, 1], got {alpha}")
    mean = alpha * raw.mean + (1.0 - alpha) * calibrated.mean
    return replace(raw, mean=mean, source="calibrated")


@dataclass
class MetaTrainConfig:
    shots: int = 5
    episodes: int = 200
    lr_max: float = 1.0
    warmup: int = 20
    seed: int = 0


def build_meta_tape(params: CalibrationParams, knowledge: SemanticKnowledge,
                    class_names: list[str]) -> tuple[Tape, int]:
    """Tape computing the mean per-class MSE between calibrated shot
    prototypes (inputs ``p_meta_<name>``) and exact means (``target_<name>``)."""
    tape = Tape()
    pnodes = _register_params(tape, params)
    losses = []
    for name in class_names:
        p_node = tape.input(f"p_meta_{name}")
        target = tape.input(f"target_{name}")
        _, out = _calibration_nodes(tape, pnodes, p_node, name, knowledge)
        diff = tape.sub(out, target)
        losses.append(tape.mean(tape.mul(diff, diff)))
    total = losses[0]
    for node in losses[1:]:
        total = tape.add(total, node)
    return tape, tape.scale(total, 1.0 / len(losses))


def meta_train(base_features: FeatureSet, knowledge: SemanticKnowledge,
               params: CalibrationParams,
               config: MetaTrainConfig) -> tuple[CalibrationParams, list[float]]:
    """Episodic training of the calibration net on base classes.

    Every episode samples ``config.shots`` distinct shots per class, builds
    the shot prototypes, and takes one SGD step on the MSE against the
    exact class means.  Returns the trained parameters and the loss trace.
    """
    if config.shots < 1:
        raise InvalidConfig("shots must be >= 1")
    names = list(base_features.class_names)
    per_class = {}
    targets = {}
    for label, name in enumerate(names):
        feats = base_features.class_features(label)
        if feats.shape[0] <= config.shots:
            raise InsufficientSamples(
                f"class {name!r} has {feats.shape[0]} samples; needs > {config.shots}")
        per_class[name] = feats
        targets[name] = feats.mean(axis=0).reshape(1, -1)

    tape, loss = build_meta_tape(params, knowledge, names)
    feeds = {f"target_{name}": targets[name] for name in names}
    trace: list[float] = []
    for ep in range(config.episodes):
        gen = rng.stream(config.seed, "meta-episode", ep)
        for name in names:
            feats = per_class[name]
            idx = rng.choice(gen, feats.shape[0], config.shots)
            feeds[f"p_meta_{name}"] = feats[idx].mean(axis=0).reshape(1, -1)
        tape.forward(feeds)
        trace.append(float(tape.value(loss)))
        grads = tape.backward(loss)
        sgd_step(tape, grads, cosine_lr(ep, config.episodes, config.lr_max,
                                        config.warmup))
    logger.info("meta training: %d episodes, loss %.5f -> %.5f",
                config.episodes, trace[0] if trace else float("nan"),
                trace[-1] if trace else float("nan"))
    return _read_params(tape, params), trace
