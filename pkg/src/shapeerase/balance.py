"""Difficulty-based weighting of the shape-related and shape-erased objectives."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class AlphaPair(NamedTuple):
    alpha_sr: float
    alpha_se: float


def reweight(grad_sr_z, grad_se_z) -> AlphaPair:
    """Weights proportional to the squared gradient norms w.r.t. the representation.

    ``grad_sr_z`` and ``grad_se_z`` are the gradients of the two objectives with
    respect to the integrated representation of the whole batch.  They are
    plain arrays, so no gradient can flow back through the weights.  The
    objective with the larger norm gets the larger weight; if both vanish the
    weights fall back to (0.5, 0.5).
    """
    g_sr = np.asarray(grad_sr_z, dtype=np.float64)
    g_se = np.asarray(grad_se_z, dtype=np.float64)
    if g_sr.shape != g_se.shape:
        raise ValueError(f"gradient shapes differ: {g_sr.shape} vs {g_se.shape}")
    n_sr = float(np.sum(g_sr * g_sr))
    n_se = float(np.sum(g_se * g_se))
    if n_sr + n_se == 0.0:
        return AlphaPair(0.5, 0.5)
    a_sr = n_sr / (n_sr + n_se)
    return AlphaPair(a_sr, 1.0 - a_sr)
