"""Semi-orthogonal projector and the shape-related / shape-erased split.

For a projector ``P`` of shape (n, m), m < n, a representation row ``z`` splits
into ``z_sr = P^T z`` (m-dim, shape-related) and ``z_se = (I - P P^T) z``
(n-dim, shape-erased).  ``P`` is only softly kept semi-orthogonal through
:func:`ortho_penalty`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc


@dataclass(frozen=True)
class Projector:
    """Trainable (n, m) matrix; columns span the shape-related subspace."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        if P.ndim != 2:
            raise ValueError(f"projector must be 2-D, got shape {P.shape}")
        n, m = P.shape
        if not m < n:
            raise ValueError(f"projector needs m < n, got n={n}, m={m}")
        if not np.all(np.isfinite(P)):
            raise ValueError("projector has non-finite entries")
        object.__setattr__(self, "P", P)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.P.shape[1]

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> "Projector":
        # N(0, 1/n) keeps initial column norms near 1
        return cls(rng.standard_normal((n, m)) / np.sqrt(n))


def _as_matrix(proj) -> dc.Tensor:
    if isinstance(proj, Projector):
        return dc.constant(proj.P)
    return dc.as_tensor(proj)


def decompose(z, proj):
    """Split ``z`` (batch, n) into ``(z_sr, z_se)``; differentiable in both inputs.

    ``proj`` may be a :class:`Projector`, an ndarray, or a graph ``Tensor``.
    """
    z, P = dc.as_tensor(z), _as_matrix(proj)
    n = P.shape[0]
    if z.value.ndim != 2 or z.shape[1] != n:
        raise dc.ShapeError("decompose", z.shape, P.shape, f"expected z with {n} columns")
    z_sr = dc.matmul(z, P)
    z_se = dc.sub(z, dc.matmul(z_sr, dc.transpose(P)))
    return z_sr, z_se


def ortho_penalty(proj) -> dc.Tensor:
    """Mean over columns of the L1 deviation of ``P^T P`` from the identity."""
    P = _as_matrix(proj)
    m = P.shape[1]
    gram = dc.matmul(dc.transpose(P), P)
    return dc.mul(dc.l1_norm(dc.sub(gram, dc.constant(np.eye(m)))), 1.0 / m)


def cross_penalty(proj_a, proj_b) -> dc.Tensor:
    """L1 size of ``P_a^T P_b`` averaged over the columns of ``P_a``.

    Used by the two-projector variant, where the two subspaces are pushed
    apart instead of a single projector being pushed towards orthonormality.
    """
    A, B = _as_matrix(proj_a), _as_matrix(proj_b)
    return dc.mul(dc.l1_norm(dc.matmul(dc.transpose(A), B)), 1.0 / A.shape[1])


def mean_abs_cosine(P: np.ndarray) -> float:
    """Mean |cosine similarity| over distinct column pairs of ``P``."""
    P = np.asarray(P, dtype=np.float64)
    cols = P / np.linalg.norm(P, axis=0, keepdims=True)
    cos = cols.T @ cols
    iu = np.triu_indices(P.shape[1], k=1)
    return float(np.abs(cos[iu]).mean())
