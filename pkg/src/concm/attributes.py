"""Semantic knowledge assembly.

The attribute pool is built once from the base session: pooled attribute
names, their word embeddings, and a visual prototype per attribute (the
mean feature over all base samples of classes possessing it).  Later
sessions reuse the frozen pool and only add class word embeddings and
association columns; a novel class is associated with the intersection of
its attribute list and the pool, and flagged uncovered when that
intersection is empty.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FeatureSet
from .errors import (EmptyAttribute, MissingEmbedding, ParseError, SchemaError,
                     UnknownClass)

logger = logging.getLogger("concm.attributes")


class AttributeTable:
    """Class name -> attribute names, with stable (file) ordering."""

    def __init__(self, classes: dict[str, list[str]]):
        self.classes = classes

    def attributes_for(self, class_name: str) -> list[str]:
        if class_name not in self.classes:
            raise UnknownClass(f"class {class_name!r} not in attribute table")
        return self.classes[class_name]

    def __contains__(self, class_name: str) -> bool:
        return class_name in self.classes


@dataclass(frozen=True)
class AttributePool:
    """Pooled attributes: names plus semantic and visual vectors per row."""

    names: tuple[str, ...]
    semantic: np.ndarray  # (N_a, d_s)
    visual: np.ndarray    # (N_a, d_f)

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def d_s(self) -> int:
        return self.semantic.shape[1]

    @property
    def d_f(self) -> int:
        return self.visual.shape[1]


@dataclass(frozen=True)
class AssociationMatrix:
    """Binary pool-attribute x class table; column order = class_names."""

    r: np.ndarray
    class_names: tuple[str, ...]

    def column(self, class_name: str) -> np.ndarray:
        try:
            j = self.class_names.index(class_name)
        except ValueError:
            raise UnknownClass(f"class {class_name!r} not in association matrix")
        return self.r[:, j]

    @property
    def uncovered(self) -> frozenset[str]:
        zero = ~self.r.any(axis=0)
        return frozenset(name for name, z in zip(self.class_names, zero) if z)


@dataclass(frozen=True)
class SemanticKnowledge:
    """Frozen pool + class word embeddings + associations for seen classes."""

    pool: AttributePool
    class_semantic: dict[str, np.ndarray]
    assoc: AssociationMatrix


def load_attribute_table(path) -> AttributeTable:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict) or "classes" not in obj:
        raise SchemaError(f"{path}: expected an object with a 'classes' key")
    classes = obj["classes"]
    if not isinstance(classes, dict):
        raise SchemaError(f"{path}: 'classes' must be an object")
    out: dict[str, list[str]] = {}
    for name, attrs in classes.items():
        if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
            raise SchemaError(f"{path}: attribute list for {name!r} must be strings")
        out[name] = list(attrs)
    return AttributeTable(out)


def load_semantic_embeddings(path) -> dict[str, np.ndarray]:
    """Parse the name,s0,...,s{d-1} CSV of word embeddings."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}:1: empty file")
    header = lines[0].split(",")
    if header[0] != "name" or len(header) < 2:
        raise ParseError(f"{path}:1: expected header 'name,s0,...'")
    d_s = len(header) - 1
    if header[1:] != [f"s{i}" for i in range(d_s)]:
        raise ParseError(f"{path}:1: malformed embedding column names")
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != d_s + 1:
            raise SchemaError(f"{path}:{lineno}: expected {d_s + 1} fields")
        name = parts[0]
        if name in out:
            raise SchemaError(f"{path}:{lineno}: duplicate name {name!r}")
        try:
            out[name] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out


def pool_attribute_names(base_features: FeatureSet, table: AttributeTable) -> tuple[str, ...]:
    """Pooled attribute names in first-appearance order over base classes."""
    seen: dict[str, None] = {}
    for name in base_features.class_names:
        for attr in table.attributes_for(name):
            seen.setdefault(attr, None)
    return tuple(seen)


def attribute_visual_prototypes(base_features: FeatureSet,
                                table: AttributeTable) -> tuple[tuple[str, ...], np.ndarray]:
    """Visual prototype per pooled attribute: mean over all supporting samples.

    An attribute supported by several classes is averaged over the pooled
    raw samples of those classes, not over per-class means.
    """
    names = pool_attribute_names(base_features, table)
    owners: dict[str, list[int]] = {a: [] for a in names}
    for label, cname in enumerate(base_features.class_names):
        for attr in table.attributes_for(cname):
            if attr in owners:
                owners[attr].append(label)
    visual = np.zeros((len(names), base_features.dim))
    for i, attr in enumerate(names):
        mask = np.isin(base_features.labels, owners[attr])
        if not mask.any():
            raise EmptyAttribute(f"attribute {attr!r} has no supporting samples")
        visual[i] = base_features.features[mask].mean(axis=0)
    return names, visual


def build_pool(base_features: FeatureSet, table: AttributeTable,
               embeddings: dict[str, np.ndarray]) -> AttributePool:
    names, visual = attribute_visual_prototypes(base_features, table)
    d_s = None
    rows = []
    for attr in names:
        if attr not in embeddings:
            raise MissingEmbedding(attr)
        vec = embeddings[attr]
        if d_s is None:
            d_s = vec.shape[0]
        elif vec.shape[0] != d_s:
            raise SchemaError(f"embedding for {attr!r} has dim {vec.shape[0]}, "
                              f"expected {d_s}")
        rows.append(vec)
    return AttributePool(names=names, semantic=np.vstack(rows), visual=visual)


def build_knowledge(class_names: list[str], embeddings: dict[str, np.ndarray],
                    table: AttributeTable, pool: AttributePool | None = None,
                    base_features: FeatureSet | None = None) -> SemanticKnowledge:
    """Assemble the semantic knowledge set for the given (cumulative) classes.

    In the base session pass ``base_features`` to build the pool; afterwards
    pass the frozen ``pool``.  Association columns for classes outside the
    pool's attribute vocabulary are the table intersection; empty
    intersections are flagged uncovered (calibration then falls back to the
    raw prototype).
    """
    if pool is None:
        if base_features is None:
            raise SchemaError("build_knowledge needs either a pool or base features")
        pool = build_pool(base_features, table, embeddings)
    index = {a: i for i, a in enumerate(pool.names)}
    r = np.zeros((pool.size, len(class_names)), dtype=np.int8)
    class_semantic: dict[str, np.ndarray] = {}
    for j, name in enumerate(class_names):
        if name not in embeddings:
            raise MissingEmbedding(name)
        vec = embeddings[name]
        if vec.shape[0] != pool.d_s:
            raise SchemaError(f"embedding for {name!r} has dim {vec.shape[0]}, "
                              f"expected {pool.d_s}")
        class_semantic[name] = vec
        for attr in table.attributes_for(name):
            if attr in index:
                r[index[attr], j] = 1
    assoc = AssociationMatrix(r=r, class_names=tuple(class_names))
    for name in sorted(assoc.uncovered):
        logger.warning("class %r shares no attribute with the pool; "
                       "calibration will fall back to the raw prototype", name)
    return SemanticKnowledge(pool=pool, class_semantic=class_semantic, assoc=assoc)
