"""Training loop: composite objective, gradient-norm weighting, SGD with momentum, EMA teacher."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from . import diffcore as dc
from .balance import AlphaPair, reweight
from .evalkit import chance_map, evaluate
from .losses import LossBundle, compose, hard_ce, soft_ce, srmse, triplet_batch_hard
from .model import EmaState, ModelConfig, classify, ema_update, encode, init_params, save_checkpoint
from .subspace import cross_penalty, decompose, mean_abs_cosine, ortho_penalty
from .synthdata import Batch, Dataset, GenConfig, generate, pk_batch

log = logging.getLogger(__name__)

TOGGLES = ("kl", "ortho", "sr", "se", "reweight")
PRETRAINED_PREFIXES = ("trunk.", "bn.")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    steps_per_epoch: int = 50
    lr_random: float = 0.1
    lr_pretrained: float = 0.01
    momentum: float = 0.9
    decay_epochs: Tuple[int, ...] = (20, 50)
    decay_factor: float = 0.1
    margin: float = 0.3
    ema_decay: float = 0.999
    kl: bool = True
    ortho: bool = True
    sr: bool = True
    se: bool = True
    reweight: bool = True
    projectors: int = 1
    hidden: int = 128
    n: int = 64
    m: int = 16
    m2: int = 32
    ids_per_batch: int = 8
    samples_per_modality: int = 4
    eval_every: int = 1
    log_steps: bool = False
    seed: int = 0

    def __post_init__(self):
        d = tuple(self.decay_epochs)
        object.__setattr__(self, "decay_epochs", d)
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"decay epochs must be strictly increasing, got {d}")
        if self.projectors not in (1, 2):
            raise ValueError("projectors must be 1 or 2")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be >= 1")

    def with_toggles(self, **flags) -> "TrainConfig":
        bad = set(flags) - set(TOGGLES)
        if bad:
            raise KeyError(f"unknown toggle(s): {sorted(bad)}")
        return replace(self, **flags)

    def model_config(self, input_dim: int, n_classes: int) -> ModelConfig:
        return ModelConfig(input_dim=input_dim, hidden=self.hidden, n=self.n, m=self.m,
                           n_classes=n_classes, two_projectors=self.projectors == 2, m2=self.m2)


def lr_at(epoch: int, cfg: TrainConfig) -> Tuple[float, float]:
    """Step schedule: both base rates times ``decay_factor`` per decay epoch passed."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    scale = cfg.decay_factor ** sum(epoch >= e for e in cfg.decay_epochs)
    return cfg.lr_random * scale, cfg.lr_pretrained * scale


@dataclass
class TrainState:
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]
    ema: EmaState
    velocity: Dict[str, np.ndarray]
    model_cfg: ModelConfig
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0


def init_state(cfg: TrainConfig, model_cfg: ModelConfig, seed: Optional[int] = None) -> TrainState:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params, buffers = init_params(model_cfg, rng)
    return TrainState(params, buffers, EmaState.from_student(params, buffers, cfg.ema_decay),
                      {k: np.zeros_like(v) for k, v in params.items()}, model_cfg, rng)


def shape_targets(ema: EmaState, model_cfg: ModelConfig, x_shape) -> np.ndarray:
    """Teacher shape-view embedding ``z^(s)`` in R^m (eval mode, no statistics written)."""
    z, _ = encode(ema.params, ema.buffers, x_shape, "s", model_cfg, training=False)
    return z.value @ ema.params["proj.P"]


def forward_losses(leaves, buffers, batch: Batch, targets: np.ndarray,
                   cfg: TrainConfig, model_cfg: ModelConfig, frozen: Optional[dict] = None) -> dict:
    """Build every enabled loss component on a batch.

    Returns a dict with ``components`` (name -> Tensor), the integrated
    representation ``z`` of the whole batch, the shape-related and
    shape-erased objectives ``sr``/``se``, the running-statistic
    ``updates`` and the gradient-stopped soft targets under ``stopped``.
    Passing a previous ``stopped`` dict as ``frozen`` reuses those targets
    instead of reading them off the current parameters.
    """
    frozen = frozen or {}
    stopped = {}

    def stop(key, compute):
        stopped[key] = frozen[key] if key in frozen else compute()
        return stopped[key]

    vis = batch.modality == 1
    ir = ~vis
    z1, up1 = encode(leaves, buffers, batch.x[vis], "1", model_cfg, training=True)
    z2, up2 = encode(leaves, buffers, batch.x[ir], "2", model_cfg, training=True)
    z = dc.concat([z1, z2])
    labels = np.concatenate([batch.labels[vis], batch.labels[ir]])
    order = np.concatenate([np.flatnonzero(vis), np.flatnonzero(ir)])
    # partner indices in the concatenated order
    pos = np.empty_like(order)
    pos[order] = np.arange(order.size)
    partner = pos[batch.partner[order]]
    targets = targets[order]
    updates = {**up1, **up2}

    comp = {}
    logits = classify(z, leaves, "g")
    comp["id"] = hard_ce(logits, labels)
    comp["triplet"] = triplet_batch_hard(z, labels, cfg.margin)
    if cfg.kl:
        comp["kl"] = soft_ce(logits, stop("kl", lambda: logits.value[partner]))

    P = leaves["proj.P"]
    z_sr, z_se = decompose(z, P)
    se_head = "g"
    if model_cfg.two_projectors:
        z_se = dc.matmul(z, leaves["proj.P2"])
        se_head = "gse"
    elif not model_cfg.shared_se_head:
        se_head = "gse"

    if cfg.sr:
        zs, up_s = encode(leaves, buffers, batch.x_shape[order], "s", model_cfg, training=True)
        updates.update(up_s)
        comp["sid"] = hard_ce(classify(dc.matmul(zs, P), leaves, "gs"), labels)
        comp["srmse"] = srmse(z_sr, targets)
        comp["srkl"] = soft_ce(classify(z_sr, leaves, "gs"),
                               stop("srkl", lambda: classify(targets, leaves, "gs").value))
    if cfg.se:
        se_logits = classify(z_se, leaves, se_head)
        comp["seid"] = hard_ce(se_logits, labels)
        comp["sekl"] = soft_ce(se_logits, stop("sekl", lambda: se_logits.value[partner]))
    if cfg.ortho:
        comp["ortho"] = (cross_penalty(P, leaves["proj.P2"]) if model_cfg.two_projectors
                         else ortho_penalty(P))

    zero = dc.constant(0.0)
    sr = dc.add(comp.get("srmse", zero), comp.get("srkl", zero))
    se = dc.add(comp.get("seid", zero), comp.get("sekl", zero))
    return {"components": comp, "z": z, "sr": sr, "se": se, "updates": updates, "stopped": stopped}


def balance_weights(out: dict, cfg: TrainConfig) -> AlphaPair:
    if not cfg.reweight:
        return AlphaPair(0.5, 0.5)
    g_sr, g_se = (dc.grad(out[k], [out["z"]])[0] for k in ("sr", "se"))
    return reweight(g_sr, g_se)


def training_objective(cfg: TrainConfig, model_cfg: ModelConfig, params, buffers, batch: Batch,
                       targets: np.ndarray):
    """The total loss as a function of the parameters, for gradient checking.

    Everything a training step treats as constant (the soft targets and the
    weights ``alpha``) is evaluated once at ``params`` and then held fixed, so
    the function's gradient at ``params`` is the one a step follows.
    """
    leaves = {k: dc.Tensor(v, op="param", name=k) for k, v in params.items()}
    out = forward_losses(leaves, buffers, batch, targets, cfg, model_cfg)
    alpha, frozen = balance_weights(out, cfg), out["stopped"]

    def objective(leaves):
        out = forward_losses(leaves, buffers, batch, targets, cfg, model_cfg, frozen)
        return compose(out["components"], *alpha)[0]
    return objective


def sgd_momentum(params, velocity, grads, lr_random: float, lr_pretrained: float, momentum: float):
    """``v <- momentum * v + g``; ``p <- p - lr * v`` with the learning rate chosen per parameter group."""
    new_p, new_v = {}, {}
    for k, p in params.items():
        lr = lr_pretrained if k.startswith(PRETRAINED_PREFIXES) else lr_random
        v = momentum * velocity[k] + grads[k]
        new_v[k] = v
        new_p[k] = p - lr * v
    return new_p, new_v


def train_step(batch: Batch, state: TrainState, cfg: TrainConfig):
    """One optimisation step.  Returns ``(new_state, LossBundle, diagnostics)``."""
    mcfg = state.model_cfg
    targets = shape_targets(state.ema, mcfg, batch.x_shape)
    leaves = {k: dc.Tensor(v, op="param", name=k) for k, v in state.params.items()}
    out = forward_losses(leaves, state.buffers, batch, targets, cfg, mcfg)
    alpha = balance_weights(out, cfg)
    total, bundle = compose(out["components"], *alpha)
    grads = dict(zip(leaves, dc.grad(total, leaves.values())))

    lr_r, lr_p = lr_at(state.epoch, cfg)
    params, velocity = sgd_momentum(state.params, state.velocity, grads, lr_r, lr_p, cfg.momentum)
    buffers = {**state.buffers, **out["updates"]}
    ema = ema_update(state.ema, params, buffers)
    P = params["proj.P"]
    diag = {
        "lr": lr_r,
        "lr_pretrained": lr_p,
        "ortho_diag": float(ortho_penalty(P).value),
        "cos_diag": mean_abs_cosine(P),
    }
    new_state = TrainState(params, buffers, ema, velocity, mcfg, state.rng, state.epoch, state.step + 1)
    return new_state, bundle, diag


# --- experiments ----------------------------------------------------------

@dataclass
class RunResult:
    metrics: List[dict]
    final: dict
    state: TrainState
    out_dir: Optional[Path] = None


def _header(cfg: TrainConfig, gen_cfg: GenConfig, data_seed: int) -> dict:
    return {"tool": "shapeerase", "version": __version__,
            "train_config": asdict(cfg), "gen_config": asdict(gen_cfg), "data_seed": data_seed}


def run_experiment(cfg: TrainConfig, gen_cfg: GenConfig = GenConfig(), out_dir=None,
                   dataset: Optional[Dataset] = None, data_seed: Optional[int] = None,
                   header_extra: Optional[dict] = None) -> RunResult:
    """Train from scratch and evaluate the teacher after every ``eval_every`` epochs.

    With ``out_dir`` set, writes ``metrics.jsonl``, ``student.json``,
    ``teacher.json`` and ``eval.json`` there, each carrying a header with the
    configuration (plus ``header_extra``).
    """
    data_seed = cfg.seed if data_seed is None else data_seed
    if dataset is None:
        dataset = generate(gen_cfg, data_seed)
    else:
        gen_cfg, data_seed = dataset.config, dataset.seed
    train, test = dataset.train, dataset.test
    mcfg = cfg.model_config(train.x.shape[1], train.n_classes)
    state = init_state(cfg, mcfg)
    header = {**_header(cfg, gen_cfg, data_seed), **(header_extra or {})}
    chance = chance_map(test.labels[test.modality == 2], test.labels[test.modality == 1])

    out_path = Path(out_dir) if out_dir is not None else None
    stream = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        stream = (out_path / "metrics.jsonl").open("w")
        stream.write(json.dumps({"kind": "header", **header}) + "\n")

    metrics: List[dict] = []
    final: dict = {}
    try:
        for epoch in range(cfg.epochs):
            state.epoch = epoch
            acc: Dict[str, float] = {}
            for _ in range(cfg.steps_per_epoch):
                batch = pk_batch(train, state.rng, cfg.ids_per_batch, cfg.samples_per_modality)
                state, bundle, diag = train_step(batch, state, cfg)
                row = {**bundle.as_dict(), **diag}
                for k, v in row.items():
                    acc[k] = acc.get(k, 0.0) + v
                if cfg.log_steps:
                    rec = {"kind": "step", "epoch": epoch, "step": state.step, **row}
                    metrics.append(rec)
                    if stream:
                        stream.write(json.dumps(rec) + "\n")
            rec = {"kind": "epoch", "epoch": epoch, "step": state.step,
                   **{k: v / cfg.steps_per_epoch for k, v in acc.items()}}
            if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
                final = evaluate(state.ema.params, state.ema.buffers, mcfg, test, chance=chance)
                rec.update({f"eval_{k}": v for k, v in final.items()})
            metrics.append(rec)
            if stream:
                stream.write(json.dumps(rec) + "\n")
            log.debug("epoch %d total=%.4f", epoch, rec["total"])
    finally:
        if stream:
            stream.close()

    if out_path is not None:
        save_checkpoint(out_path / "student.json", mcfg, state.params, state.buffers, header)
        save_checkpoint(out_path / "teacher.json", mcfg, state.ema.params, state.ema.buffers, header)
        (out_path / "eval.json").write_text(json.dumps({"header": header, "eval": final}, indent=1) + "\n")
    return RunResult(metrics, final, state, out_path)


TABLE4 = {
    "exp1_baseline": dict(kl=False, ortho=False, sr=False, se=False, reweight=False),
    "exp2_kl": dict(kl=True, ortho=False, sr=False, se=False, reweight=False),
    "exp3_sr": dict(kl=True, ortho=False, sr=True, se=False, reweight=False),
    "exp4_sr_se": dict(kl=True, ortho=False, sr=True, se=True, reweight=False),
    "exp5_ortho": dict(kl=True, ortho=True, sr=True, se=True, reweight=False),
    "exp6_full": dict(kl=True, ortho=True, sr=True, se=True, reweight=True),
}

TABLE5 = {
    "two_proj": dict(projectors=2, ortho=False),
    "two_proj_cross": dict(projectors=2, ortho=True),
    "one_proj": dict(projectors=1, ortho=False),
    "one_proj_ortho": dict(projectors=1, ortho=True),
}


def ablate(cfg: TrainConfig, gen_cfg: GenConfig, seeds, variants: dict) -> List[dict]:
    """Run each variant over ``seeds``; one row per variant with per-seed and mean test metrics."""
    rows = []
    for name, overrides in variants.items():
        per_seed = []
        for seed in seeds:
            res = run_experiment(replace(cfg, seed=seed, **overrides), gen_cfg)
            per_seed.append(res.final)
        keys = per_seed[0].keys()
        rows.append({"variant": name, **overrides,
                     **{f"mean_{k}": float(np.mean([r[k] for r in per_seed])) for k in keys},
                     "seeds": list(seeds),
                     "per_seed_map": [r["map"] for r in per_seed],
                     "per_seed_cmc1": [r["cmc1"] for r in per_seed],
                     "per_seed": per_seed})
    return rows


# --- gradient checks --------------------------------------------------------

TOY_GEN = GenConfig(n_ids=6, n_test_ids=2, n_per_id=3, d_shape=3, d_app=3, input_dim=8)


def toy_problem(seed: int = 0, cfg: Optional[TrainConfig] = None):
    """A 4-identity batch (2 samples per modality each) with a small model and a perturbed teacher.

    Returns ``(cfg, model_cfg, params, buffers, batch, targets)``.
    """
    cfg = cfg or TrainConfig(hidden=10, n=8, m=3, m2=4, ids_per_batch=4, samples_per_modality=2)
    rng = np.random.default_rng(seed)
    ds = generate(TOY_GEN, seed)
    mcfg = cfg.model_config(TOY_GEN.input_dim, ds.train.n_classes)
    params, buffers = init_params(mcfg, rng)
    # move away from the symmetric start so no gradient vanishes identically
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()}
    teacher = EmaState.from_student({k: v + 0.05 * rng.standard_normal(v.shape) for k, v in params.items()},
                                    buffers)
    batch = pk_batch(ds.train, rng, cfg.ids_per_batch, cfg.samples_per_modality)
    return cfg, mcfg, params, buffers, batch, shape_targets(teacher, mcfg, batch.x_shape)


def _loss_cases(rng: np.random.Generator):
    """Per-loss objectives over random inputs: ``name -> (objective, params)``."""
    N, C, n, m = 8, 5, 6, 3
    labels = np.repeat(np.arange(4), 2)
    target = rng.standard_normal((N, C))
    ref = rng.standard_normal((N, m))
    w = rng.standard_normal((N, n))
    w_sr, w_se = rng.standard_normal((N, m)), rng.standard_normal((N, n))
    rm, rv = rng.standard_normal(n), rng.random(n) + 0.5
    return {
        "hard_ce": (lambda p: hard_ce(p["logits"], labels % C), {"logits": rng.standard_normal((N, C))}),
        "soft_ce": (lambda p: soft_ce(p["logits"], target), {"logits": rng.standard_normal((N, C))}),
        "triplet": (lambda p: triplet_batch_hard(p["z"], labels, 0.3), {"z": rng.standard_normal((N, n))}),
        "srmse": (lambda p: srmse(p["z_sr"], ref), {"z_sr": rng.standard_normal((N, m))}),
        "ortho_penalty": (lambda p: ortho_penalty(p["P"]), {"P": rng.standard_normal((n, m)) / np.sqrt(n)}),
        "cross_penalty": (lambda p: cross_penalty(p["A"], p["B"]),
                          {"A": rng.standard_normal((n, m)), "B": rng.standard_normal((n, 4))}),
        "decompose": (lambda p: _weighted_decompose(p["z"], p["P"], w_sr, w_se),
                      {"z": rng.standard_normal((N, n)), "P": rng.standard_normal((n, m))}),
        "batch_norm": (lambda p: dc.tsum(dc.mul(dc.batch_norm(
                           p["x"], p["gamma"], p["beta"], running_mean=rm, running_var=rv,
                           training=True)[0], dc.constant(w))),
                       {"x": rng.standard_normal((N, n)), "gamma": rng.standard_normal(n),
                        "beta": rng.standard_normal(n)}),
    }


def _weighted_decompose(z, P, w_sr, w_se):
    z_sr, z_se = decompose(z, P)
    return dc.add(dc.tsum(dc.mul(z_sr, dc.constant(w_sr))), dc.tsum(dc.mul(z_se, dc.constant(w_se))))


def gradient_suite(seed: int = 0, loss_tol: float = 1e-6, full_tol: float = 1e-4,
                   eps: float = 1e-5) -> List[dict]:
    """Finite-difference checks of each loss and of the full objective with every toggle on.

    One row per check: ``name``, ``max_rel_err``, ``tol``, ``pass``.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for name, (objective, params) in _loss_cases(rng).items():
        err = max(dc.grad_check(objective, params, eps).values())
        rows.append({"name": name, "max_rel_err": err, "tol": loss_tol, "pass": bool(err < loss_tol)})
    cfg, mcfg, params, buffers, batch, targets = toy_problem(seed)
    objective = training_objective(cfg, mcfg, params, buffers, batch, targets)
    report = dc.grad_check(objective, params, eps)
    worst = max(report, key=report.get)
    rows.append({"name": "full_objective", "max_rel_err": report[worst], "worst_param": worst,
                 "tol": full_tol, "pass": bool(report[worst] < full_tol)})
    return rows
