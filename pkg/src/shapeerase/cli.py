"""Command-line entry point: ``shapeerase <command> [flags]``.

Commands: ``gen-data``, ``train``, ``eval``, ``ablate``, ``gradcheck``, ``milab``.

Every command reads one flat run configuration.  Values come from the
built-in defaults, then an optional ``--config`` file, then flags (flags
win).  The file holds one ``key = value`` pair per line with JSON values::

    # comments and blank lines are ignored
    epochs = 20
    decay_epochs = [10, 15]
    kl = false

Run ``shapeerase <command> --print-config`` to see every key with its
resolved value.  Artifacts are JSON documents that start with a header
naming the tool, its version and the resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from . import milab, trainer
from .evalkit import evaluate
from .model import load_checkpoint
from .synthdata import GenConfig, generate, load_dataset, save_dataset
from .trainer import TABLE4, TABLE5, TOGGLES, TrainConfig

log = logging.getLogger("shapeerase")

COMMANDS = ("gen-data", "train", "eval", "ablate", "gradcheck", "milab")

# options that belong to neither the generator nor the trainer
EXTRA_DEFAULTS = {
    "data_seed": None,        # dataset seed; null means "same as seed"
    "dataset": "",            # dataset file to train/evaluate on; empty means generate one
    "checkpoint": "",         # checkpoint for eval; empty means <out>/teacher.json
    "split": "test",          # split evaluated by eval
    "out": "runs",            # output directory
    "seeds": [0, 1, 2, 3, 4],  # ablation seeds (--seed s shifts them to s, s+1, ...)
    "table": "both",          # ablation table: "4", "5" or "both"
    "trials": 100,            # constructed systems per claim in milab
}

_TRAIN_KEYS = [f.name for f in fields(TrainConfig)]
_GEN_KEYS = [f.name for f in fields(GenConfig)]
DEFAULTS: Dict[str, object] = {
    **asdict(GenConfig()),
    **{k: list(v) if isinstance(v, tuple) else v for k, v in asdict(TrainConfig()).items()},
    **EXTRA_DEFAULTS,
}
# keys that describe where results go rather than what is computed
_LOCATION_KEYS = ("out",)


class CliError(Exception):
    """A user-facing failure; the message is printed and the exit code is 2."""


# --- configuration --------------------------------------------------------

def _coerce(key: str, value):
    default = DEFAULTS[key]
    if default is None:
        if value is None or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise CliError(f"config key {key!r}: expected an integer or null, got {value!r}")
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, (str, int)) and not isinstance(value, bool):
            return str(value)
    elif isinstance(default, list):
        if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return list(value)
    raise CliError(f"config key {key!r}: expected {type(default).__name__}, got {value!r}")


def parse_config(text: str, source: str = "<config>") -> Dict[str, object]:
    """Parse ``key = value`` lines into a dict of overrides (unknown keys rejected)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise CliError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value  # bare strings need no quotes
        out[key] = _coerce(key, parsed)
    return out


def serialize_config(cfg: Dict[str, object]) -> str:
    return "".join(f"{k} = {json.dumps(cfg[k])}\n" for k in sorted(cfg))


def resolve_config(args: argparse.Namespace) -> Dict[str, object]:
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        cfg.update(parse_config(path.read_text(), str(path)))
    if args.seed is not None:
        if args.command == "ablate":
            cfg["seeds"] = [args.seed + i for i in range(len(cfg["seeds"]))]
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    for item in args.toggle or []:
        name, sep, state = item.partition("=")
        if not sep or name not in TOGGLES or state not in ("on", "off"):
            raise CliError(f"bad --toggle {item!r}; expected one of {TOGGLES} followed by =on or =off")
        cfg[name] = state == "on"
    for key, flag in (("dataset", "dataset"), ("checkpoint", "checkpoint"), ("trials", "trials")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = _coerce(key, value)
    return cfg


def gen_config(cfg) -> GenConfig:
    return GenConfig(**{k: cfg[k] for k in _GEN_KEYS})


def train_config(cfg) -> TrainConfig:
    return TrainConfig(**{k: tuple(cfg[k]) if k == "decay_epochs" else cfg[k] for k in _TRAIN_KEYS})


def data_seed(cfg) -> int:
    return cfg["seed"] if cfg["data_seed"] is None else cfg["data_seed"]


def header(command: str, cfg) -> dict:
    return {"tool": "shapeerase", "version": __version__, "command": command,
            "config": {k: v for k, v in sorted(cfg.items()) if k not in _LOCATION_KEYS}}


def _load_dataset(cfg):
    if cfg["dataset"]:
        path = Path(cfg["dataset"])
        if not path.is_file():
            raise CliError(f"dataset file not found: {path}")
        return load_dataset(path)
    return generate(gen_config(cfg), data_seed(cfg))


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _table(rows: Sequence[dict], cols: Sequence[str]) -> str:
    def cell(v):
        if isinstance(v, bool):
            return "on" if v else "off"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)
    body = [[cell(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(cols)]
    fmt = lambda xs: "  ".join(x.rjust(w) if i else x.ljust(w) for i, (x, w) in enumerate(zip(xs, widths)))
    return "\n".join([fmt(cols), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]) + "\n"


# --- commands ---------------------------------------------------------------

def cmd_gen_data(cfg, out: Path) -> int:
    ds = generate(gen_config(cfg), data_seed(cfg))
    out.mkdir(parents=True, exist_ok=True)
    path = save_dataset(ds, out / "dataset.json", header("gen-data", cfg))
    print(f"wrote {path}: {ds.train.x.shape[0]} train / {ds.test.x.shape[0]} test samples")
    return 0


def cmd_train(cfg, out: Path) -> int:
    ds = _load_dataset(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(serialize_config(cfg))
    res = trainer.run_experiment(train_config(cfg), out_dir=out, dataset=ds,
                                 header_extra=header("train", cfg))
    print(_table([res.final], ["cmc1", "cmc5", "cmc10", "map", "z_sr_map", "z_se_map", "chance_map"]), end="")
    print(f"wrote {out / 'metrics.jsonl'} and checkpoints in {out}")
    return 0


def cmd_eval(cfg, out: Path) -> int:
    ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "teacher.json"
    if not ckpt.is_file():
        raise CliError(f"checkpoint file not found: {ckpt}")
    if cfg["split"] not in ("train", "test"):
        raise CliError(f"config key 'split': expected 'train' or 'test', got {cfg['split']!r}")
    mcfg, params, buffers, ckpt_header = load_checkpoint(ckpt)
    ds = _load_dataset(cfg)
    split = getattr(ds, cfg["split"])
    if split.x.shape[1] != mcfg.input_dim:
        raise CliError(f"dataset input width {split.x.shape[1]} does not match checkpoint ({mcfg.input_dim})")
    report = evaluate(params, buffers, mcfg, split, seed=cfg["seed"])
    _write_json(out / "eval_report.json", {"header": header("eval", cfg), "checkpoint_header": ckpt_header,
                                           "split": cfg["split"], "eval": report})
    print(_table([report], list(report)), end="")
    return 0


_ABLATION_COLS = ["variant", "kl", "ortho", "sr", "se", "reweight", "projectors", "mean_map", "mean_cmc1",
                  "mean_z_sr_map", "mean_z_se_map", "mean_probe_z_sr", "mean_probe_z_se"]


def cmd_ablate(cfg, out: Path) -> int:
    if cfg["table"] not in ("4", "5", "both"):
        raise CliError(f"config key 'table': expected '4', '5' or 'both', got {cfg['table']!r}")
    base, gcfg = train_config(cfg), gen_config(cfg)
    tables = {"4": TABLE4, "5": TABLE5}
    for name in (("4", "5") if cfg["table"] == "both" else (cfg["table"],)):
        rows = trainer.ablate(base, gcfg, cfg["seeds"], tables[name])
        for r in rows:
            for k in TOGGLES + ("projectors",):
                r.setdefault(k, getattr(base, k))
        _write_json(out / f"ablation_table{name}.json", {"header": header("ablate", cfg), "rows": rows})
        text = _table(rows, _ABLATION_COLS)
        (out / f"ablation_table{name}.txt").write_text(text)
        print(f"table {name} (seeds {cfg['seeds']})")
        print(text)
    return 0


def cmd_gradcheck(cfg, out: Path) -> int:
    rows = trainer.gradient_suite(cfg["seed"])
    rows = [{**r, "max_rel_err": float(r["max_rel_err"])} for r in rows]
    _write_json(out / "gradcheck.json", {"header": header("gradcheck", cfg), "checks": rows})
    text = _table([{**r, "max_rel_err": f"{r['max_rel_err']:.3e}", "tol": f"{r['tol']:g}",
                    "pass": "PASS" if r["pass"] else "FAIL"} for r in rows],
                  ["name", "max_rel_err", "tol", "pass"])
    (out / "gradcheck.txt").write_text(text)
    print(text, end="")
    return 0 if all(r["pass"] for r in rows) else 1


def cmd_milab(cfg, out: Path) -> int:
    if cfg["trials"] < 1:
        raise CliError("config key 'trials' must be >= 1")
    results = milab.verify_suite(cfg["trials"], cfg["seed"])
    projection = [
        {"case": "isotropic", "cov": [[1.0, 0.0], [0.0, 1.0]], "direction": [1.0, 1.0]},
        {"case": "correlated", "cov": [[3.0, 1.0], [1.0, 1.0]], "direction": [1.0, 0.3]},
    ]
    for row in projection:
        row["mi"] = milab.projection_mi(row["cov"], row["direction"], seed=cfg["seed"])
    _write_json(out / "milab.json", {"header": header("milab", cfg),
                                     "claims": [r.as_dict() for r in results],
                                     "orthogonal_projection_mi": projection})
    text = milab.format_report(results) + "\n\northogonal split of a 2-D Gaussian, plug-in MI (nats):\n"
    text += "".join(f"  {r['case']:10s} {r['mi']:.5f}\n" for r in projection)
    (out / "milab.txt").write_text(text)
    print(text, end="")
    return 0 if all(r.passed for r in results) else 1


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "milab": cmd_milab}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="seed for every random draw of the command")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--toggle", action="append", metavar="NAME=on|off",
                        help=f"switch a loss component ({', '.join(TOGGLES)}); repeatable")
    common.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="shapeerase", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {"gen-data": "write a synthetic dataset file", "train": "train and write metrics and checkpoints",
             "eval": "evaluate a checkpoint on a dataset", "ablate": "run the component and projector ablations",
             "gradcheck": "finite-difference gradient checks", "milab": "verify the information-theory claims"}
    parsers = {c: sub.add_parser(c, parents=[common], help=helps[c]) for c in COMMANDS}
    for c in ("train", "eval"):
        parsers[c].add_argument("--dataset", metavar="PATH", help="dataset file (default: generate one)")
    parsers["eval"].add_argument("--checkpoint", metavar="PATH", help="checkpoint file (default: <out>/teacher.json)")
    parsers["milab"].add_argument("--trials", type=int, help="constructed systems per claim")
    return parser


def run_command(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its message
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(serialize_config(cfg), end="")
            return 0
        log.debug("resolved config for %s:\n%s", args.command, serialize_config(cfg))
        return HANDLERS[args.command](cfg, Path(cfg["out"]))
    except CliError as exc:
        print(f"shapeerase {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"shapeerase {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
