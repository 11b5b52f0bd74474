"""Synthetic feature benchmark with planted attribute structure.

Classes are Gaussian clusters whose means are sums of a few attribute
direction vectors plus a small class-unique component, so attribute-based
prototype completion is effective by construction.  Word embeddings mirror
the same membership structure in a separate semantic space, and the
per-dimension variance of a class depends on its attributes, which makes
classes with similar means have similar covariance diagonals.  Ground
truth (means, covariances, memberships) is retained for oracle tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .attributes import AttributeTable
from .data import FeatureSet, save_features
from .errors import InvalidConfig


@dataclass
class GenConfig:
    base_classes: int = 10
    sessions: int = 4
    way: int = 5
    shot: int = 5
    d_f: int = 64
    d_s: int = 16
    pool_size: int = 12
    attrs_per_class: int = 3
    base_samples: int = 100
    test_samples: int = 30
    noise: float = 0.3
    unique_scale: float = 0.03
    semantic_noise: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.base_classes < 2 or self.way < 1 or self.sessions < 0:
            raise InvalidConfig("need >= 2 base classes and positive way")
        if self.shot < 1 or self.base_samples < 2 or self.test_samples < 1:
            raise InvalidConfig("sample counts out of range")
        if self.attrs_per_class < 1 or self.attrs_per_class > self.pool_size:
            raise InvalidConfig("attrs_per_class must lie in [1, pool_size]")
        total = self.total_classes
        if math.comb(self.pool_size, self.attrs_per_class) < total:
            raise InvalidConfig(
                f"pool of {self.pool_size} attributes cannot give {total} "
                f"distinct {self.attrs_per_class}-subsets")
        if self.noise <= 0:
            raise InvalidConfig("noise must be positive")

    @property
    def total_classes(self) -> int:
        return self.base_classes + self.sessions * self.way


@dataclass
class ClassTruth:
    name: str
    mean: np.ndarray
    cov_diag: np.ndarray
    attributes: list[str]


@dataclass
class GeneratedBenchmark:
    config: GenConfig
    train_sets: list[FeatureSet]          # index 0 = base session
    test_sets: list[FeatureSet]           # one per session, same class split
    table: AttributeTable
    embeddings: dict[str, np.ndarray]
    truth: dict[str, ClassTruth]
    attribute_visual: dict[str, np.ndarray] = field(default_factory=dict)

    def session_class_names(self, t: int) -> list[str]:
        return list(self.train_sets[t].class_names)


def _unit_rows(gen, n: int, d: int) -> np.ndarray:
    m = rng.gaussian(gen, (n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _assign_attributes(cfg: GenConfig) -> list[tuple[int, ...]]:
    """Distinct attribute subsets; every pool attribute occurs in the base."""
    gen = rng.stream(cfg.seed, "attr-assignment")
    combos: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    for c in range(cfg.total_classes):
        forced = [a for a in range(cfg.pool_size)
                  if c < cfg.base_classes and a % cfg.base_classes == c]
        forced = forced[:cfg.attrs_per_class]
        for _ in range(10000):
            pool = [a for a in range(cfg.pool_size) if a not in forced]
            extra = rng.choice(gen, len(pool), cfg.attrs_per_class - len(forced))
            combo = tuple(sorted(forced + [pool[i] for i in extra]))
            if combo not in seen:
                break
        else:
            raise InvalidConfig("could not find distinct attribute subsets")
        seen.add(combo)
        combos.append(combo)
    return combos


def generate_benchmark(cfg: GenConfig) -> GeneratedBenchmark:
    """Build the full benchmark: per-session train/test sets plus ground truth."""
    cfg.validate()
    attr_names = [f"attr_{i:02d}" for i in range(cfg.pool_size)]
    class_names = [f"class_{i:02d}" for i in range(cfg.total_classes)]

    visual = _unit_rows(rng.stream(cfg.seed, "attr-visual"), cfg.pool_size, cfg.d_f)
    semantic = _unit_rows(rng.stream(cfg.seed, "attr-semantic"), cfg.pool_size, cfg.d_s)
    # attribute-linked variance profile; mean over dims is 1 for each row
    var_profile = visual ** 2 * cfg.d_f

    combos = _assign_attributes(cfg)
    truth: dict[str, ClassTruth] = {}
    embeddings: dict[str, np.ndarray] = {
        name: semantic[i] for i, name in enumerate(attr_names)}
    table: dict[str, list[str]] = {}
    gen_cls = rng.stream(cfg.seed, "class-unique")
    for cid, name in enumerate(class_names):
        combo = combos[cid]
        mean = visual[list(combo)].sum(axis=0) \
            + cfg.unique_scale * rng.gaussian(gen_cls, (cfg.d_f,))
        sem = semantic[list(combo)].sum(axis=0) \
            + cfg.semantic_noise * rng.gaussian(gen_cls, (cfg.d_s,))
        cov = cfg.noise ** 2 * (0.55 + 0.45 * var_profile[list(combo)].mean(axis=0))
        truth[name] = ClassTruth(name=name, mean=mean, cov_diag=cov,
                                 attributes=[attr_names[a] for a in combo])
        embeddings[name] = sem
        table[name] = [attr_names[a] for a in combo]

    def draw(name: str, split: str, count: int) -> np.ndarray:
        t = truth[name]
        gen = rng.stream(cfg.seed, "samples", split, name)
        return t.mean + rng.gaussian(gen, (count, cfg.d_f)) * np.sqrt(t.cov_diag)

    def make_set(names: list[str], split: str, count: int) -> FeatureSet:
        feats = np.vstack([draw(n, split, count) for n in names])
        labels = np.repeat(np.arange(len(names)), count)
        return FeatureSet(features=feats, labels=labels, class_names=tuple(names))

    session_names = [class_names[:cfg.base_classes]]
    for t in range(1, cfg.sessions + 1):
        start = cfg.base_classes + (t - 1) * cfg.way
        session_names.append(class_names[start:start + cfg.way])

    train_sets = [make_set(session_names[0], "train", cfg.base_samples)]
    train_sets += [make_set(names, "train", cfg.shot) for names in session_names[1:]]
    test_sets = [make_set(names, "test", cfg.test_samples) for names in session_names]

    return GeneratedBenchmark(
        config=cfg, train_sets=train_sets, test_sets=test_sets,
        table=AttributeTable(table), embeddings=embeddings, truth=truth,
        attribute_visual={n: visual[i] for i, n in enumerate(attr_names)})


def write_benchmark(bench: GeneratedBenchmark, outdir) -> Path:
    """Write feature CSVs, attribute table, embeddings, truth and manifest.

    Returns the manifest path.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = bench.config

    save_features(bench.train_sets[0], outdir / "base.csv")
    session_files = []
    for t in range(1, cfg.sessions + 1):
        fname = f"session_{t:02d}.csv"
        save_features(bench.train_sets[t], outdir / fname)
        session_files.append(fname)
    test_files = []
    for t, ts in enumerate(bench.test_sets):
        fname = f"test_{t:02d}.csv"
        save_features(ts, outdir / fname)
        test_files.append(fname)

    (outdir / "attributes.json").write_text(
        json.dumps({"classes": bench.table.classes}, indent=2) + "\n",
        encoding="utf-8")

    d_s = cfg.d_s
    lines = ["name," + ",".join(f"s{i}" for i in range(d_s))]
    for name, vec in bench.embeddings.items():
        lines.append(name + "," + ",".join(repr(float(x)) for x in vec))
    (outdir / "semantic.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    truth_obj = {
        "config": asdict(cfg),
        "classes": {
            name: {
                "mean": [float(x) for x in t.mean],
                "cov_diag": [float(x) for x in t.cov_diag],
                "attributes": t.attributes,
            } for name, t in bench.truth.items()
        },
        "attribute_visual": {
            name: [float(x) for x in vec]
            for name, vec in bench.attribute_visual.items()
        },
    }
    (outdir / "truth.json").write_text(json.dumps(truth_obj, indent=2) + "\n",
                                       encoding="utf-8")

    manifest = {
        "base": "base.csv",
        "sessions": session_files,
        "attributes": "attributes.json",
        "semantic": "semantic.csv",
        "tests": test_files,
        "truth": "truth.json",
    }
    manifest_path = outdir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path
