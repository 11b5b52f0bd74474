"""Deterministic random streams.

Every random draw in the package flows from a single master seed through
named substreams.  Substream keys are hashed with SHA-256, so the stream a
component sees depends only on (master seed, labels), not on call order
elsewhere in the program.  Gaussian variates use Box-Muller over a Philox
counter-based generator, which keeps sampled bytes identical across
platforms and process runs.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "stream", "gaussian", "uniform", "permutation", "choice"]

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, *labels) -> int:
    """Derive a child seed from a master seed and a tuple of labels.

    Labels may be ints or strings; they are folded into a SHA-256 digest so
    that distinct label tuples give independent streams.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest()[:8], "little") & _MASK64


def stream(master: int, *labels) -> np.random.Generator:
    """A Philox generator for the named substream."""
    return np.random.Generator(np.random.Philox(key=derive_seed(master, *labels)))


def uniform(gen: np.random.Generator, shape) -> np.ndarray:
    """Uniform draws in [0, 1) as 64-bit floats."""
    return gen.random(shape, dtype=np.float64)


def gaussian(gen: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws via Box-Muller on Philox uniforms."""
    n = int(np.prod(shape)) if shape else 1
    half = (n + 1) // 2
    # open interval (0, 1] for u1 so log() is finite
    u1 = 1.0 - uniform(gen, half)
    u2 = uniform(gen, half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape)


def permutation(gen: np.random.Generator, n: int) -> np.ndarray:
    return gen.permutation(n)


def choice(gen: np.random.Generator, n: int, size: int, replace: bool = False) -> np.ndarray:
    return gen.choice(n, size=size, replace=replace)
