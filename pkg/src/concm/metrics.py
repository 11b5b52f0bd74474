"""Nearest-class-mean classification and the evaluation metric suite.

All rates are percentages in [0, 100].  Per-session records hold Top-1,
base/novel accuracy, their harmonic mean, the balanced error rate over the
base-positive binary split, the structure matching rate, and cosine
similarity diagnostics.  Run-level aggregates: AHM (mean harmonic mean
over incremental sessions), FA (final-session Top-1) and PD (base-session
Top-1 minus FA).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import SchemaError, ShapeError
from .structure import StructureMatrix

logger = logging.getLogger("concm.metrics")


def ncm_classify(z: np.ndarray, structure: StructureMatrix):
    """Class index with the highest inner product (ties: lowest index).

    On unit vectors this equals minimum Euclidean distance to the columns.
    Accepts a single vector or a batch of rows.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    scores = (z.reshape(1, -1) if single else z) @ structure.columns
    picks = np.argmax(scores, axis=1)
    return int(picks[0]) if single else picks


@dataclass
class SessionRecord:
    t: int
    top1: float
    bacc: Optional[float]
    nacc: Optional[float]
    hm: Optional[float]
    ber: Optional[float]
    smr: Optional[float] = None
    sim_cls: Optional[float] = None
    sim_in: Optional[float] = None


def harmonic_mean(bacc: float, nacc: float) -> float:
    if bacc + nacc == 0.0:
        return 0.0
    return 2.0 * bacc * nacc / (bacc + nacc)


def session_metrics(preds: np.ndarray, labels: np.ndarray,
                    base_class_set: set[int], t: int = 0) -> SessionRecord:
    """Accuracy metrics for one session's predictions.

    Metrics whose subset is empty (e.g. novel accuracy in the base session)
    are reported as absent, not zero.
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ShapeError("preds and labels must have the same length")
    base_ids = np.asarray(sorted(base_class_set), dtype=np.int64)
    is_base = np.isin(labels, base_ids)
    pred_base = np.isin(preds, base_ids)
    top1 = 100.0 * float(np.mean(preds == labels))

    bacc = nacc = hm = ber = None
    if is_base.any():
        bacc = 100.0 * float(np.mean(preds[is_base] == labels[is_base]))
    if (~is_base).any():
        nacc = 100.0 * float(np.mean(preds[~is_base] == labels[~is_base]))
    if bacc is not None and nacc is not None:
        hm = harmonic_mean(bacc, nacc)
        fnr = 100.0 * float(np.mean(~pred_base[is_base]))
        fpr = 100.0 * float(np.mean(pred_base[~is_base]))
        ber = balanced_error_rate(fnr, fpr)
    return SessionRecord(t=t, top1=top1, bacc=bacc, nacc=nacc, hm=hm, ber=ber)


def balanced_error_rate(fnr: float, fpr: float) -> float:
    return (fnr + fpr) / 2.0


def run_metrics(records: list[SessionRecord],
                base_acc: float) -> tuple[Optional[float], float, float]:
    """(AHM, FA, PD) from per-session records and the base-session Top-1."""
    hms = [r.hm for r in records if r.t >= 1 and r.hm is not None]
    ahm = float(np.mean(hms)) if hms else None
    fa = records[-1].top1
    return ahm, fa, base_acc - fa


def similarity_stats(z: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(between-class, within-class) cosine similarity diagnostics.

    The first value is the mean pairwise cosine between distinct class-mean
    directions (lower = better separated); the second is the mean cosine of
    samples to their own class-mean direction (higher = more compact).
    Singleton classes are skipped in the within-class term.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ShapeError("similarity stats need at least two classes")
    dirs = []
    within = []
    for c in classes:
        rows = z[labels == c]
        mean = rows.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            logger.warning("class %d has a zero-norm mean; skipped", int(c))
            continue
        direction = mean / norm
        dirs.append(direction)
        if rows.shape[0] < 2:
            logger.debug("class %d is a singleton; skipped in within-class term",
                         int(c))
            continue
        rn = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        within.append(rn @ direction)
    d = np.vstack(dirs)
    gram = d @ d.T
    iu = np.triu_indices(d.shape[0], k=1)
    sim_cls = float(gram[iu].mean())
    sim_in = float(np.concatenate(within).mean()) if within else float("nan")
    return sim_cls, sim_in


@dataclass
class RunReport:
    sessions: list[SessionRecord]
    ahm: Optional[float]
    fa: float
    pd: float
    base_acc: float
    strategy: str = "concm"
    seed: int = 0


_REQUIRED_RUN_FIELDS = ("sessions", "ahm", "fa", "pd", "base_acc")
_SESSION_FIELDS = ("t", "top1", "bacc", "nacc", "hm", "ber", "smr",
                   "sim_cls", "sim_in")


def report_to_json(report: RunReport) -> str:
    obj = {
        "sessions": [asdict(r) for r in report.sessions],
        "ahm": report.ahm,
        "fa": report.fa,
        "pd": report.pd,
        "base_acc": report.base_acc,
        "strategy": report.strategy,
        "seed": report.seed,
    }
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_from_json(text: str) -> RunReport:
    obj = json.loads(text)
    for key in _REQUIRED_RUN_FIELDS:
        if key not in obj:
            raise SchemaError(f"report missing field {key!r}")
    sessions = []
    for i, rec in enumerate(obj["sessions"]):
        for key in _SESSION_FIELDS:
            if key not in rec:
                raise SchemaError(f"session record {i} missing field {key!r}")
        sessions.append(SessionRecord(**{k: rec[k] for k in _SESSION_FIELDS}))
    return RunReport(sessions=sessions, ahm=obj["ahm"], fa=obj["fa"],
                     pd=obj["pd"], base_acc=obj["base_acc"],
                     strategy=obj.get("strategy", "concm"),
                     seed=obj.get("seed", 0))


def report_to_csv(report: RunReport) -> str:
    def cell(v):
        return "" if v is None else repr(float(v))
    lines = [",".join(_SESSION_FIELDS)]
    for r in report.sessions:
        rec = asdict(r)
        lines.append(",".join(str(rec["t"]) if k == "t" else cell(rec[k])
                              for k in _SESSION_FIELDS))
    return "\n".join(lines) + "\n"


def format_report_table(report: RunReport) -> str:
    """Human-readable session table plus the aggregate footer."""
    headers = ("session", "top1", "bacc", "nacc", "hm", "ber", "smr",
               "sim_cls", "sim_in")

    def fmt(v, digits=2):
        return "-" if v is None or (isinstance(v, float) and np.isnan(v)) \
            else f"{v:.{digits}f}"

    rows = [[str(r.t), fmt(r.top1), fmt(r.bacc), fmt(r.nacc), fmt(r.hm),
             fmt(r.ber), fmt(r.smr), fmt(r.sim_cls, 4), fmt(r.sim_in, 4)]
            for r in report.sessions]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    out = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    for row in rows:
        out.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    out.append("")
    out.append(f"base_acc {fmt(report.base_acc)}  AHM {fmt(report.ahm)}  "
               f"FA {fmt(report.fa)}  PD {fmt(report.pd)}")
    return "\n".join(out) + "\n"
