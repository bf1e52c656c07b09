"""Cross-modal retrieval metrics (CMC, mAP) and linear latent probes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import diffcore as dc
from .model import ModelConfig, encode
from .subspace import decompose


@dataclass(frozen=True)
class RetrievalResult:
    cmc: np.ndarray   # cmc[k-1] = fraction of queries with a correct match in the top k
    map: float

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, self.cmc.size) - 1])


def _distances(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    d2 = (q * q).sum(1)[:, None] + (g * g).sum(1)[None, :] - 2.0 * q @ g.T
    return np.sqrt(np.maximum(d2, 0.0))


def retrieval_eval(query_feats, query_labels, gallery_feats, gallery_labels) -> RetrievalResult:
    """Rank the gallery by Euclidean distance for every query.

    Ties are broken by gallery index.  AP of a query is the mean precision at
    the ranks of its correct matches.
    """
    qf, gf = np.asarray(query_feats, float), np.asarray(gallery_feats, float)
    ql, gl = np.asarray(query_labels), np.asarray(gallery_labels)
    if qf.ndim != 2 or gf.ndim != 2 or qf.shape[1] != gf.shape[1]:
        raise ValueError(f"feature shapes differ: query {qf.shape}, gallery {gf.shape}")
    missing = np.setdiff1d(np.unique(ql), gl)
    if missing.size:
        raise ValueError(f"query label {missing[0].item()!r} does not occur in the gallery")
    order = np.argsort(_distances(qf, gf), axis=1, kind="stable")
    hits = gl[order] == ql[:, None]
    first = hits.argmax(axis=1)
    ng = gf.shape[0]
    cmc = (first[:, None] <= np.arange(ng)[None, :]).mean(axis=0)
    cum = np.cumsum(hits, axis=1)
    precision = cum / np.arange(1, ng + 1)
    ap = (precision * hits).sum(axis=1) / hits.sum(axis=1)
    return RetrievalResult(cmc, float(ap.mean()))


def chance_map(query_labels, gallery_labels, n_perm: int = 200, seed: int = 0) -> float:
    """Mean AP of uniformly random rankings, by Monte Carlo."""
    ql, gl = np.asarray(query_labels), np.asarray(gallery_labels)
    rng = np.random.default_rng(seed)
    ng = gl.size
    total = 0.0
    for _ in range(n_perm):
        hits = gl[rng.permutation(ng)][None, :] == ql[:, None]
        precision = np.cumsum(hits, axis=1) / np.arange(1, ng + 1)
        total += ((precision * hits).sum(1) / hits.sum(1)).mean()
    return float(total / n_perm)


def shape_probe(features, shape_codes, seed: int = 0, ridge: float = 1e-3) -> float:
    """Held-out R^2 of a ridge-regularized linear probe from features to shape codes.

    The rows are split in half at random (by ``seed``); the probe is fit on one
    half and scored on the other, R^2 averaged over target dimensions.
    """
    X, Y = np.asarray(features, float), np.asarray(shape_codes, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if n <= X.shape[1] + 1:
        raise ValueError(f"probe needs more than {X.shape[1] + 1} rows, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    fit, ev = perm[: n // 2], perm[n // 2:]
    mx, my = X[fit].mean(0), Y[fit].mean(0)
    Xf, Yf = X[fit] - mx, Y[fit] - my
    W = np.linalg.solve(Xf.T @ Xf + ridge * np.eye(X.shape[1]), Xf.T @ Yf)
    pred = (X[ev] - mx) @ W + my
    ss_res = ((Y[ev] - pred) ** 2).sum(0)
    ss_tot = ((Y[ev] - Y[ev].mean(0)) ** 2).sum(0)
    return float(np.mean(1.0 - ss_res / ss_tot))


def embed(params: Mapping, buffers: Mapping, cfg: ModelConfig, x, view: str) -> dict:
    """Eval-mode features ``z``, ``z_sr`` and ``z_se`` as arrays."""
    z, _ = encode(params, buffers, x, view, cfg, training=False)
    z_sr, z_se = decompose(z, params["proj.P"])
    if cfg.two_projectors:
        z_se = dc.matmul(z, params["proj.P2"])
    return {"z": z.value, "z_sr": z_sr.value, "z_se": z_se.value}


def evaluate(params: Mapping, buffers: Mapping, cfg: ModelConfig, split, seed: int = 0,
             chance: Optional[float] = None) -> dict:
    """Infrared-query / visible-gallery retrieval plus shape probes on a split."""
    vis, ir = split.modality == 1, split.modality == 2
    gal = embed(params, buffers, cfg, split.x[vis], "1")
    qry = embed(params, buffers, cfg, split.x[ir], "2")
    report = {}
    for key in ("z", "z_sr", "z_se"):
        res = retrieval_eval(qry[key], split.labels[ir], gal[key], split.labels[vis])
        prefix = "" if key == "z" else f"{key}_"
        if key == "z":
            for k in (1, 5, 10):
                report[f"cmc{k}"] = res.rank(k)
        report[f"{prefix}map"] = res.map
        feats = np.vstack([gal[key], qry[key]])
        codes = np.vstack([split.shape_code[vis], split.shape_code[ir]])
        report[f"probe_{key}"] = shape_probe(feats, codes, seed=seed)
    report["chance_map"] = chance if chance is not None else chance_map(split.labels[ir], split.labels[vis])
    return report
