"""Loss terms and their composition into the training objective.

All losses take and return :class:`~shapeerase.diffcore.Tensor` values so they
can be differentiated; inputs may also be plain arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from . import diffcore as dc

COMPONENTS = ("id", "triplet", "kl", "seid", "sekl", "srmse", "srkl", "sid", "ortho")


def _onehot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    bad = (labels < 0) | (labels >= n_classes)
    if bad.any():
        raise ValueError(f"label {int(labels[bad][0])} out of range [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def hard_ce(logits, labels) -> dc.Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    logits = dc.as_tensor(logits)
    target = _onehot(labels, logits.shape[1])
    if target.shape[0] != logits.shape[0]:
        raise dc.ShapeError("hard_ce", logits.shape, target.shape)
    return dc.mul(dc.tsum(dc.mul(dc.log_softmax(logits), dc.constant(target))),
                  -1.0 / logits.shape[0])


def soft_ce(logits, target_logits) -> dc.Tensor:
    """Mean cross-entropy against softmax(``target_logits``); the target is gradient-stopped."""
    logits, target_logits = dc.as_tensor(logits), dc.as_tensor(target_logits)
    if logits.shape != target_logits.shape:
        raise dc.ShapeError("soft_ce", logits.shape, target_logits.shape)
    t = target_logits.value
    t = np.exp(t - t.max(axis=1, keepdims=True))
    t /= t.sum(axis=1, keepdims=True)
    return dc.mul(dc.tsum(dc.mul(dc.log_softmax(logits), dc.constant(t))),
                  -1.0 / logits.shape[0])


def triplet_batch_hard(features, labels, margin: float = 0.3) -> dc.Tensor:
    """Batch-hard triplet loss with Euclidean distance.

    Every sample is an anchor; its hardest positive is the farthest other sample
    with the same label and its hardest negative the nearest sample with a
    different label.
    """
    features = dc.as_tensor(features)
    labels = np.asarray(labels)
    b = features.shape[0]
    if labels.shape != (b,):
        raise dc.ShapeError("triplet_batch_hard", features.shape, labels.shape)
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(b, dtype=bool)
    neg = ~same
    for a in range(b):
        if not pos[a].any():
            raise ValueError(f"triplet anchor {a} (label {labels[a]!r}) has no positive in the batch")
        if not neg[a].any():
            raise ValueError(f"triplet anchor {a} (label {labels[a]!r}) has no negative in the batch")
    dist = dc.sqrt(dc.pairwise_sqdist(features))
    hardest_pos = dc.masked_max(dist, pos)
    hardest_neg = dc.masked_min(dist, neg)
    return dc.mean(dc.relu(dc.add(dc.sub(hardest_pos, hardest_neg), float(margin))))


def srmse(z_sr, z_target) -> dc.Tensor:
    """Mean over the batch of ``||z_sr - z_target||^2 / m``; the target is gradient-stopped."""
    z_sr = dc.as_tensor(z_sr)
    target = dc.as_tensor(z_target).value
    if z_sr.shape != target.shape:
        raise dc.ShapeError("srmse", z_sr.shape, target.shape)
    return dc.mul(dc.sq_norm(dc.sub(z_sr, dc.constant(target))), 1.0 / z_sr.value.size)


@dataclass
class LossBundle:
    """Named loss components, their composites, and the balancing weights.

    Values are plain floats; :func:`compose` also returns the differentiable
    total alongside a bundle.
    """

    id: float = 0.0
    triplet: float = 0.0
    kl: float = 0.0
    seid: float = 0.0
    sekl: float = 0.0
    srmse: float = 0.0
    srkl: float = 0.0
    sid: float = 0.0
    ortho: float = 0.0
    sr: float = 0.0
    se: float = 0.0
    int: float = 0.0
    total: float = 0.0
    alpha_sr: float = 0.5
    alpha_se: float = 0.5

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def compose(components: Mapping[str, object], alpha_sr: float, alpha_se: float):
    """Combine components into ``(total_tensor, LossBundle)``.

    ``total = int + alpha_sr * sr + alpha_se * se + ortho + sid`` with
    ``sr = srmse + srkl``, ``se = seid + sekl`` and ``int = id + triplet + kl``.
    Missing components count as zero.
    """
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise KeyError(f"unknown loss component(s): {sorted(unknown)}")
    if not (0.0 <= alpha_sr <= 1.0 and 0.0 <= alpha_se <= 1.0) or abs(alpha_sr + alpha_se - 1.0) > 1e-12:
        raise ValueError(f"weights must lie in [0, 1] and sum to 1, got ({alpha_sr}, {alpha_se})")
    parts = {}
    for name in COMPONENTS:
        value = components.get(name, 0.0)
        raw = value.value if isinstance(value, dc.Tensor) else np.asarray(value, dtype=np.float64)
        if raw.size != 1 or not math.isfinite(float(raw)):
            raise FloatingPointError(f"loss component '{name}' is not a finite scalar: {raw!r}")
        parts[name] = dc.as_tensor(value)
    sr = dc.add(parts["srmse"], parts["srkl"])
    se = dc.add(parts["seid"], parts["sekl"])
    integrated = dc.add(dc.add(parts["id"], parts["triplet"]), parts["kl"])
    total = dc.add(dc.add(dc.add(dc.add(integrated, dc.mul(sr, float(alpha_sr))),
                                 dc.mul(se, float(alpha_se))), parts["ortho"]), parts["sid"])
    bundle = LossBundle(**{k: float(v.value) for k, v in parts.items()},
                        sr=float(sr.value), se=float(se.value), int=float(integrated.value),
                        total=float(total.value), alpha_sr=float(alpha_sr), alpha_se=float(alpha_se))
    return total, bundle
