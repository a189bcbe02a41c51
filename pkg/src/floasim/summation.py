"""Compensated (Kahan-Babuska/Neumaier) summation over a fixed order."""

from __future__ import annotations

from typing import Iterable

import numpy as np


def kahan_sum(terms: Iterable[np.ndarray]) -> np.ndarray:
    """Sum equally-shaped arrays elementwise, in iteration order, with compensation.

    The result depends only on the order of ``terms``; callers fix that order
    (worker index, sample index) to get bitwise-reproducible reductions.
    """
    it = iter(terms)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("kahan_sum needs at least one term") from None
    total = np.array(first, dtype=np.float64, copy=True)
    comp = np.zeros_like(total)
    for term in it:
        term = np.asarray(term, dtype=np.float64)
        t = total + term
        # Neumaier: pick the compensation branch per element by magnitude
        big = np.abs(total) >= np.abs(term)
        comp += np.where(big, (total - t) + term, (term - t) + total)
        total = t
    return total + comp
