"""Synthetic two-modality identity data with a paired shape view.

Each identity owns a shape code ``s`` and an appearance code ``a``.  A sample
draws a pose perturbation ``e_p`` and is rendered as

    x       = W_mod [s + e_p ; mask_mod(a)] + b_mod + e_x
    x_shape = W_s (s + e_p) + e_x'

Modality 1 (visible) sees all of ``a``; modality 2 (infrared) sees only its
first ``ceil(rho * d_app)`` dimensions.  The shape view never depends on
``a``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

FORMAT = "shapeerase-dataset"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GenConfig:
    n_ids: int = 40
    n_test_ids: int = 8
    n_per_id: int = 20          # samples per identity per modality
    d_shape: int = 6
    d_app: int = 6
    input_dim: int = 32
    pose_sigma: float = 0.3
    sensor_sigma: float = 0.1
    rho: float = 0.5
    mix_seed: int = 1234        # fixes W_1, W_2, W_s, b_1, b_2

    def __post_init__(self):
        for name in ("n_ids", "n_test_ids", "n_per_id", "d_shape", "d_app", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"GenConfig.{name} must be >= 1")
        if self.pose_sigma < 0 or self.sensor_sigma < 0:
            raise ValueError("noise levels must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.n_ids < 2:
            raise ValueError("need at least 2 identities for retrieval")
        if self.n_test_ids >= self.n_ids:
            raise ValueError("n_test_ids must leave at least one training identity")

    @property
    def n_app_ir(self) -> int:
        return math.ceil(self.rho * self.d_app)


@dataclass
class Split:
    """Samples of a set of identities; ``labels`` are contiguous within the split."""

    x: np.ndarray
    x_shape: np.ndarray
    labels: np.ndarray
    identity: np.ndarray
    modality: np.ndarray
    shape_code: np.ndarray
    app_code: np.ndarray
    pose: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def select(self, mask) -> "Split":
        return Split(**{f.name: getattr(self, f.name)[mask] for f in fields(self)})


@dataclass
class Dataset:
    config: GenConfig
    seed: int
    train: Split
    test: Split
    maps: dict = field(default_factory=dict)


def mixing_maps(config: GenConfig) -> dict:
    rng = np.random.default_rng(config.mix_seed)
    d_lat = config.d_shape + config.d_app
    return {
        "W_1": rng.standard_normal((config.input_dim, d_lat)) / np.sqrt(d_lat),
        "W_2": rng.standard_normal((config.input_dim, d_lat)) / np.sqrt(d_lat),
        "W_s": rng.standard_normal((config.input_dim, config.d_shape)) / np.sqrt(config.d_shape),
        "b_1": rng.standard_normal(config.input_dim),
        "b_2": rng.standard_normal(config.input_dim),
    }


def generate(config: GenConfig, seed: int) -> Dataset:
    """Draw a dataset with an identity-disjoint train/test split."""
    maps = mixing_maps(config)
    rng = np.random.default_rng(seed)
    C, N = config.n_ids, config.n_per_id
    shape_codes = rng.standard_normal((C, config.d_shape))
    app_codes = rng.standard_normal((C, config.d_app))
    test_ids = np.sort(rng.permutation(C)[: config.n_test_ids])

    keep_ir = np.zeros(config.d_app)
    keep_ir[: config.n_app_ir] = 1.0
    rows = {k: [] for k in ("x", "x_shape", "identity", "modality", "shape_code", "app_code", "pose")}
    for c in range(C):
        for mod in (1, 2):
            pose = config.pose_sigma * rng.standard_normal((N, config.d_shape))
            s = shape_codes[c] + pose
            a = app_codes[c] * (1.0 if mod == 1 else keep_ir)
            latent = np.hstack([s, np.broadcast_to(a, (N, config.d_app))])
            x = latent @ maps[f"W_{mod}"].T + maps[f"b_{mod}"]
            x = x + config.sensor_sigma * rng.standard_normal(x.shape)
            xs = s @ maps["W_s"].T + config.sensor_sigma * rng.standard_normal(x.shape)
            rows["x"].append(x)
            rows["x_shape"].append(xs)
            rows["identity"].append(np.full(N, c))
            rows["modality"].append(np.full(N, mod))
            rows["shape_code"].append(np.broadcast_to(shape_codes[c], (N, config.d_shape)))
            rows["app_code"].append(np.broadcast_to(app_codes[c], (N, config.d_app)))
            rows["pose"].append(pose)
    cat = {k: np.concatenate(v) for k, v in rows.items()}
    cat["identity"] = cat["identity"].astype(np.int64)
    cat["modality"] = cat["modality"].astype(np.int64)

    def split(id_set):
        mask = np.isin(cat["identity"], id_set)
        part = {k: v[mask] for k, v in cat.items()}
        _, labels = np.unique(part["identity"], return_inverse=True)
        return Split(labels=labels.astype(np.int64), **part)

    train_ids = np.setdiff1d(np.arange(C), test_ids)
    return Dataset(config, seed, split(train_ids), split(test_ids), maps)


@dataclass
class Batch:
    """A PK mini-batch: the visible block first, then the infrared block.

    ``partner[i]`` indexes the same-identity sample of the other modality that
    sample ``i`` is matched with for the cross-modal consistency terms.
    """

    x: np.ndarray
    x_shape: np.ndarray
    labels: np.ndarray
    modality: np.ndarray
    partner: np.ndarray
    index: np.ndarray

    @property
    def n_vis(self) -> int:
        return int(np.sum(self.modality == 1))


def pk_batch(split: Split, rng: np.random.Generator, P: int = 8, K: int = 4) -> Batch:
    """Sample ``P`` identities with ``K`` visible and ``K`` infrared samples each."""
    classes = np.unique(split.labels)
    if classes.size < P:
        raise ValueError(f"split has {classes.size} identities, batch needs {P}")
    chosen = rng.choice(classes, size=P, replace=False)
    vis, ir = [], []
    for c in chosen:
        for mod, bucket in ((1, vis), (2, ir)):
            pool = np.flatnonzero((split.labels == c) & (split.modality == mod))
            if pool.size < K:
                raise ValueError(f"identity {int(split.identity[pool[0]] if pool.size else c)} "
                                 f"has {pool.size} modality-{mod} samples, batch needs {K}")
            bucket.append(rng.choice(pool, size=K, replace=False))
    index = np.concatenate(vis + ir)
    half = P * K
    partner = np.empty(2 * half, dtype=np.int64)
    for p in range(P):
        perm = rng.permutation(K)
        v = p * K + np.arange(K)
        partner[v] = half + p * K + perm
        partner[half + p * K + perm] = v
    return Batch(x=split.x[index], x_shape=split.x_shape[index], labels=split.labels[index],
                 modality=split.modality[index], partner=partner, index=index)


# --- persistence ----------------------------------------------------------

def _pack(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    kind = "int" if np.issubdtype(arr.dtype, np.integer) else "float"
    return {"shape": list(arr.shape), "dtype": kind, "data": arr.ravel().tolist()}


def _unpack(obj: dict) -> np.ndarray:
    dtype = np.int64 if obj.get("dtype") == "int" else np.float64
    return np.asarray(obj["data"], dtype=dtype).reshape(obj["shape"])


def save_dataset(ds: Dataset, path, header: Optional[dict] = None) -> Path:
    path = Path(path)
    doc = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "header": header or {},
        "config": asdict(ds.config),
        "seed": ds.seed,
        "maps": {k: _pack(v) for k, v in ds.maps.items()},
        "splits": {name: {f.name: _pack(getattr(sp, f.name)) for f in fields(sp)}
                   for name, sp in (("train", ds.train), ("test", ds.test))},
    }
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a dataset file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {doc.get('version')}")
    splits = {name: Split(**{k: _unpack(v) for k, v in body.items()})
              for name, body in doc["splits"].items()}
    return Dataset(GenConfig(**doc["config"]), doc["seed"], splits["train"], splits["test"],
                   {k: _unpack(v) for k, v in doc["maps"].items()})
