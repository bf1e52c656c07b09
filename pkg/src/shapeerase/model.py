"""Shared encoder with view-specific normalization, classifier heads, and the EMA teacher.

Parameters live in flat ``name -> ndarray`` dictionaries so they plug straight
into :func:`~shapeerase.diffcore.value_and_grad`:

* ``trunk.W1``, ``trunk.W2``, ``trunk.W3``: shared affine layers (no biases;
  every layer is followed by a normalization that would cancel them);
* ``bn.<view>.<layer>.gamma|beta``: per-view normalization after layers 1 and 2;
* ``neck.<view>.gamma|beta``: per-view normalization of the trunk output;
* ``head.g.*`` (n -> C), ``head.gs.*`` (m -> C): the two classifiers;
* ``proj.P``: the (n, m) projector (``proj.P2`` and ``head.gse.*`` for the
  two-projector variant).

Views are ``"1"`` (visible), ``"2"`` (infrared) and ``"s"`` (shape).  Running
statistics are kept in a separate buffer dictionary.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from . import diffcore as dc

VIEWS = ("1", "2", "s")
CHECKPOINT_FORMAT = "shapeerase-checkpoint"
CHECKPOINT_VERSION = 1

Arrays = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 32
    hidden: int = 128
    n: int = 64
    m: int = 16
    n_classes: int = 32
    two_projectors: bool = False
    m2: int = 32                # width of the second projector in the two-projector variant
    shared_se_head: bool = True  # classify z_se with the same head g as z
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if not 0 < self.m < self.n:
            raise ValueError(f"need 0 < m < n, got m={self.m}, n={self.n}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")


def _norm_names(view: str):
    return [f"bn.{view}.1", f"bn.{view}.2", f"neck.{view}"]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Tuple[Arrays, Arrays]:
    """Fresh ``(params, buffers)``; the three views' normalization sets start identical."""
    p: Arrays = {
        "trunk.W1": rng.standard_normal((cfg.input_dim, cfg.hidden)) * np.sqrt(2.0 / cfg.input_dim),
        "trunk.W2": rng.standard_normal((cfg.hidden, cfg.hidden)) * np.sqrt(2.0 / cfg.hidden),
        "trunk.W3": rng.standard_normal((cfg.hidden, cfg.n)) * np.sqrt(1.0 / cfg.hidden),
    }
    b: Arrays = {}
    widths = (cfg.hidden, cfg.hidden, cfg.n)
    for view in VIEWS:
        for name, width in zip(_norm_names(view), widths):
            p[f"{name}.gamma"] = np.ones(width)
            p[f"{name}.beta"] = np.zeros(width)
            b[f"{name}.mean"] = np.zeros(width)
            b[f"{name}.var"] = np.ones(width)
    p["head.g.W"] = 0.01 * rng.standard_normal((cfg.n, cfg.n_classes))
    p["head.g.b"] = np.zeros(cfg.n_classes)
    p["head.gs.W"] = 0.01 * rng.standard_normal((cfg.m, cfg.n_classes))
    p["head.gs.b"] = np.zeros(cfg.n_classes)
    p["proj.P"] = rng.standard_normal((cfg.n, cfg.m)) / np.sqrt(cfg.n)
    if cfg.two_projectors:
        p["proj.P2"] = rng.standard_normal((cfg.n, cfg.m2)) / np.sqrt(cfg.n)
    if cfg.two_projectors or not cfg.shared_se_head:
        width = cfg.m2 if cfg.two_projectors else cfg.n
        p["head.gse.W"] = 0.01 * rng.standard_normal((width, cfg.n_classes))
        p["head.gse.b"] = np.zeros(cfg.n_classes)
    return p, b


def encode(params: Mapping, buffers: Mapping[str, np.ndarray], x, view: str,
           cfg: ModelConfig, training: bool):
    """Run the shared trunk with ``view``'s normalization sets.

    ``params`` may hold arrays or graph tensors.  Returns ``(z, updates)`` where
    ``z`` is the (batch, n) normalized representation and ``updates`` maps
    buffer names of this view to their new running statistics (empty in eval
    mode).
    """
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")
    x = dc.as_tensor(x)
    if x.value.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise dc.ShapeError("encode", x.shape, (cfg.input_dim,), "input width")
    get = lambda k: dc.as_tensor(params[k])
    updates: Dict[str, np.ndarray] = {}

    def norm(h, name):
        out, mu, var = dc.batch_norm(h, get(f"{name}.gamma"), get(f"{name}.beta"),
                                     running_mean=buffers[f"{name}.mean"],
                                     running_var=buffers[f"{name}.var"],
                                     training=training, eps=cfg.bn_eps)
        if training:
            mom = cfg.bn_momentum
            updates[f"{name}.mean"] = (1 - mom) * buffers[f"{name}.mean"] + mom * mu
            updates[f"{name}.var"] = (1 - mom) * buffers[f"{name}.var"] + mom * var
        return out

    bn1, bn2, neck = _norm_names(view)
    h = dc.relu(norm(dc.matmul(x, get("trunk.W1")), bn1))
    h = dc.relu(norm(dc.matmul(h, get("trunk.W2")), bn2))
    z = norm(dc.matmul(h, get("trunk.W3")), neck)
    return z, updates


def classify(z, params: Mapping, head: str = "g") -> dc.Tensor:
    """Affine classifier ``head`` in {"g", "gs", "gse"} applied to ``z``."""
    W, b = dc.as_tensor(params[f"head.{head}.W"]), dc.as_tensor(params[f"head.{head}.b"])
    z = dc.as_tensor(z)
    if z.value.ndim != 2 or z.shape[1] != W.shape[0]:
        raise dc.ShapeError(f"classify[{head}]", z.shape, W.shape, f"head expects width {W.shape[0]}")
    return dc.add(dc.matmul(z, W), b)


@dataclass
class EmaState:
    """Parameter-space moving average of the student (parameters and running statistics)."""

    params: Arrays
    buffers: Arrays
    decay: float = 0.999

    @classmethod
    def from_student(cls, params: Mapping, buffers: Mapping, decay: float = 0.999) -> "EmaState":
        return cls({k: np.array(v) for k, v in params.items()},
                   {k: np.array(v) for k, v in buffers.items()}, decay)


def ema_update(ema: EmaState, params: Mapping[str, np.ndarray],
               buffers: Mapping[str, np.ndarray]) -> EmaState:
    """Return a new state with every tensor ``t <- decay * t + (1 - decay) * s``."""
    d = ema.decay
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1], got {d}")

    def blend(teacher, student, kind):
        if teacher.keys() != student.keys():
            raise KeyError(f"teacher/student {kind} names differ: "
                           f"{sorted(set(teacher) ^ set(student))}")
        out = {}
        for k, t in teacher.items():
            s = np.asarray(student[k])
            if t.shape != s.shape:
                raise dc.ShapeError("ema_update", t.shape, s.shape, k)
            out[k] = d * t + (1.0 - d) * s
        return out

    return EmaState(blend(ema.params, params, "parameter"), blend(ema.buffers, buffers, "buffer"), d)


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(path, cfg: ModelConfig, params: Mapping, buffers: Mapping,
                    header: Optional[dict] = None) -> Path:
    path = Path(path)
    pack = lambda d: {k: {"shape": list(np.shape(v)), "data": np.ravel(v).tolist()}
                      for k, v in sorted(d.items())}
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "header": header or {},
           "model_config": asdict(cfg), "params": pack(params), "buffers": pack(buffers)}
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def load_checkpoint(path):
    """Return ``(ModelConfig, params, buffers, header)``."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    unpack = lambda d: {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                        for k, v in d.items()}
    return ModelConfig(**doc["model_config"]), unpack(doc["params"]), unpack(doc["buffers"]), doc["header"]
