"""Reproducible random streams.

All randomness goes through numpy's counter-based Philox bit generator.
Gaussian and Student-t variates are produced by inverse-CDF transforms of
open-interval uniforms so that a given (seed, stream) pair yields the same
numbers on every platform numpy supports.
"""
import numpy as np
from scipy import special, stats

_TWO53 = float(2**53)


def make_generator(seed, *spawn_key):
    """Philox generator for ``seed``; ``spawn_key`` splits independent streams."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def open_uniform(gen, size):
    """Uniforms on the open interval (0, 1) with 53-bit resolution."""
    k = gen.integers(0, 2**53, size=size, dtype=np.int64)
    return (k.astype(np.float64) + 0.5) / _TWO53


def std_normal(gen, size):
    return special.ndtri(open_uniform(gen, size))


def std_student_t(gen, df, size):
    """Student-t with ``df`` degrees of freedom rescaled to unit variance."""
    t = stats.t.ppf(open_uniform(gen, size), df)
    return t * np.sqrt((df - 2.0) / df)


def rademacher(gen, size):
    return np.where(open_uniform(gen, size) < 0.5, -1.0, 1.0)
