"""Target-structure synthesis and diagnostics.

A structure is a d_g x N matrix of unit-norm class target vectors forming
a simplex equiangular tight frame (ETF): pairwise inner products equal to
-1/(N-1).  Each session re-synthesizes the ETF closest to an initial
structure (projected class means, with previous columns carried over
unchanged) by solving the orthogonally constrained trace maximization via
compact SVD.  The result keeps the target geometry optimal while changing
the layout as little as possible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import (DegenerateEmbedding, DegenerateInput, DimensionTooSmall,
                     InvalidInput, MissingClass, ShapeError)
from .linalg import as_matrix, svd_compact

logger = logging.getLogger("concm.structure")

_RANK_NOISE_SEED = 0x5EED


@dataclass(frozen=True)
class StructureMatrix:
    """Unit-norm class target vectors, one column per class id."""

    columns: np.ndarray
    class_ids: tuple[int, ...]
    rank_deficient: bool = False

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def num_classes(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class InitialStructure:
    """Structure seed: previous columns carried over plus new embedded means.

    historical[i] is True when column i was copied from the previous
    session's structure.
    """

    columns: np.ndarray
    class_ids: tuple[int, ...]
    historical: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def num_classes(self) -> int:
        return self.columns.shape[1]


def centering(n: int) -> np.ndarray:
    """The projector I - 11^T/n that removes the column mean."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def initial_structure(prev: StructureMatrix | None, project,
                      means: dict[int, np.ndarray]) -> InitialStructure:
    """Assemble the initial structure for the current class set.

    Columns for classes covered by ``prev`` are copied bit-exactly; each
    new class contributes the unit-normalized projection of its prototype
    mean.  ``project`` maps a d_f vector to a d_g vector; ``means`` maps
    class id to the prototype mean, and must cover every class.
    """
    class_ids = sorted(means)
    n_prev = 0
    cols = []
    if prev is not None:
        n_prev = prev.num_classes
        if tuple(class_ids[:n_prev]) != prev.class_ids:
            raise MissingClass("previous structure classes must prefix the current ones")
        cols.append(prev.columns.copy())
    new_cols = []
    for cid in class_ids[n_prev:]:
        z = np.asarray(project(means[cid]), dtype=np.float64).reshape(-1)
        nz = np.linalg.norm(z)
        if not np.isfinite(nz) or nz < 1e-12:
            raise DegenerateEmbedding(f"class {cid} projects to a zero-norm vector")
        new_cols.append(z / nz)
    if new_cols:
        cols.append(np.column_stack(new_cols))
    columns = np.hstack(cols) if len(cols) > 1 else cols[0]
    historical = np.arange(columns.shape[1]) < n_prev
    return InitialStructure(columns=columns, class_ids=tuple(class_ids),
                            historical=historical)


def nearest_optimal_structure(init: InitialStructure) -> StructureMatrix:
    """ETF closest to the initial structure in summed column inner products.

    With M the centering projector and W diag(L) V^T the compact SVD of
    init.columns @ M, the update is sqrt(N/(N-1)) * (W V^T) @ M.  The result
    always satisfies the ETF Gram condition; among all such structures it
    maximizes trace(init^T target).

    Raises DimensionTooSmall unless dim > num_classes >= 2.  A centered
    matrix of rank < N-1 (duplicate columns) is perturbed with seeded 1e-10
    noise and flagged in the result.
    """
    cols = as_matrix(init.columns, "initial structure")
    d, n = cols.shape
    if n < 2:
        raise InvalidInput(f"need at least 2 classes, got {n}")
    if d <= n:
        raise DimensionTooSmall(f"structure dim {d} must exceed class count {n}")
    m = centering(n)
    centered = cols @ m
    w, lam, v = svd_compact(centered)
    deficient = bool(np.sum(lam > max(lam[0], 1e-300) * 1e-10) < n - 1)
    if deficient:
        logger.warning("centered initial structure is rank deficient; "
                       "perturbing with 1e-10 noise")
        noise = rng.gaussian(rng.stream(_RANK_NOISE_SEED, "rank-repair", d, n), (d, n))
        w, lam, v = svd_compact(centered + 1e-10 * noise)
    u = w @ v.T
    scale = np.sqrt(n / (n - 1.0))
    out = scale * (u @ m)
    structure = StructureMatrix(columns=out, class_ids=init.class_ids,
                                rank_deficient=deficient)
    dev = geometric_optimality_deviation(structure)
    if dev > 1e-8:
        raise InvalidInput(f"structure update failed the ETF check (dev={dev:.3e})")
    return structure


def geometric_optimality_deviation(structure: StructureMatrix | np.ndarray) -> float:
    """Max absolute deviation of the Gram matrix from the ETF condition.

    The target Gram has ones on the diagonal and -1/(N-1) off it.
    """
    cols = structure.columns if isinstance(structure, StructureMatrix) else structure
    cols = as_matrix(cols, "structure")
    n = cols.shape[1]
    gram = cols.T @ cols
    target = (n / (n - 1.0)) * np.eye(n) - np.full((n, n), 1.0 / (n - 1.0))
    return float(np.abs(gram - target).max())


def structure_matching_rate(init: InitialStructure | StructureMatrix,
                            target: StructureMatrix) -> float:
    """Mean column cosine between two structures with identical class order."""
    a, b = init.columns, target.columns
    if a.shape != b.shape:
        raise ShapeError(f"structure shapes differ: {a.shape} vs {b.shape}")
    if init.class_ids != target.class_ids:
        raise ShapeError("structures order different class ids")
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    if np.any(na < 1e-12) or np.any(nb < 1e-12):
        raise DegenerateInput("zero-norm structure column")
    cosines = np.einsum("ij,ij->j", a / na, b / nb)
    return float(cosines.mean())


def random_optimal_structure(n: int, d_g: int, seed: int) -> StructureMatrix:
    """Seeded random ETF: QR of a Gaussian matrix fed through the ETF map."""
    if d_g <= n:
        raise DimensionTooSmall(f"structure dim {d_g} must exceed class count {n}")
    if n < 2:
        raise InvalidInput(f"need at least 2 classes, got {n}")
    g = rng.gaussian(rng.stream(seed, "random-structure", n, d_g), (d_g, n))
    q, r = np.linalg.qr(g)
    q = q * np.where(np.diag(r) < 0.0, -1.0, 1.0)
    cols = np.sqrt(n / (n - 1.0)) * (q @ centering(n))
    return StructureMatrix(columns=cols, class_ids=tuple(range(n)))
