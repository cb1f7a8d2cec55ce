"""Command line front end: train, eval, inspect, bench.

Exit codes: 0 success, 1 usage or config problems, 2 data problems
(unreadable or incompatible files), 3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import sys

import numpy as np

from . import bench as B
from .checkpoint import load_into_model, read_checkpoint
from .config import TrainConfig, parse_kv
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    RangeError,
    ShapeError,
    SizeError,
    StateError,
)
from .tasks import ModelReport
from .train import build_model, evaluate, load_split, make_eval_batches, train_run


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract reserves 2
    # for data problems, so route usage failures through an exception.
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ttrnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("config", help="path to a key = value config file")
    p_train.add_argument("--seed", type=int, default=None,
                         help="override the init seed")
    p_train.add_argument("--epochs", type=int, default=None,
                         help="override the epoch count")
    p_train.add_argument("--out", default=None, help="override the output dir")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("checkpoint", help="path to a .ttcp checkpoint")
    p_eval.add_argument("--config", default=None,
                        help="config file (default: the one in the checkpoint)")
    p_eval.add_argument("--split", choices=("val", "test"), default="val")
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser("inspect", help="dump a checkpoint's structure")
    p_inspect.add_argument("checkpoint", help="path to a .ttcp checkpoint")
    p_inspect.set_defaults(func=cmd_inspect)

    p_bench = sub.add_parser("bench", help="run timing sweeps from a config")
    p_bench.add_argument("config", help="path to a key = value bench config")
    p_bench.add_argument("--out", default=None,
                         help="also write report lines to this file")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config)
    # Overrides land in the config object itself, so the resolved dump and
    # its hash reflect what actually ran.
    if args.seed is not None:
        cfg.seed_init = args.seed
    if args.epochs is not None:
        if args.epochs < 0:
            raise ConfigError("field epochs: must be >= 0")
        cfg.epochs = args.epochs
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    train_run(cfg, echo=print)
    return 0


def _config_from_checkpoint(ckpt, config_path):
    if config_path is not None:
        return TrainConfig.from_file(config_path)
    if not ckpt.config_text.strip():
        raise ConfigError("checkpoint carries no config; pass --config")
    return TrainConfig.from_dict(parse_kv(ckpt.config_text, source="<checkpoint>"))


def cmd_eval(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(ckpt, args.config)
    model = build_model(cfg, np.random.default_rng(cfg.seed_init))
    load_into_model(ckpt, model)
    sequences, labels = load_split(cfg, args.split)
    batches = make_eval_batches(cfg, sequences, labels)
    loss, metric = evaluate(model, batches, cfg.is_classification())
    print(f"# config hash {cfg.digest()}")
    if cfg.is_classification():
        count = sum(b.size for b in batches)
        print(f"split={args.split} items={count} loss={loss!r} "
              f"accuracy={metric!r}")
    else:
        frames = int(sum(b.mask.sum() for b in batches))
        print(f"split={args.split} frames={frames} nll={loss!r} acc={metric!r}")
    return 0


def _describe_record(ckpt, name: str, kind: int):
    if kind == 1:
        tt, bias = ckpt.ttmap(name)
        spec = tt.spec
        count = spec.param_count() + (0 if bias is None else spec.out_dim)
        desc = (f"tt modes {'x'.join(map(str, spec.out_modes))} by "
                f"{'x'.join(map(str, spec.in_modes))} "
                f"ranks {'-'.join(map(str, spec.ranks))} params {count}")
        return count, desc
    arr = ckpt.array(name)
    shape = "x".join(map(str, arr.shape)) if arr.ndim else "scalar"
    return arr.size, f"array {shape} params {arr.size}"


def cmd_inspect(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    print(f"checkpoint: {args.checkpoint}")
    cell_total = 0
    opt_records = 0
    for name in sorted(ckpt.records):
        kind, _ = ckpt.records[name]
        if name.startswith("opt:"):
            opt_records += 1
            continue
        if name.startswith("meta:"):
            print(f"{name} = {float(ckpt.array(name).reshape(-1)[0])!r}")
            continue
        count, desc = _describe_record(ckpt, name, kind)
        print(f"{name}: {desc}")
        if name.startswith(("map:cell.", "arr:cell.")):
            cell_total += count
    if opt_records:
        print(f"optimizer state: {opt_records} tensors")
    if ckpt.config_text.strip():
        cfg = TrainConfig.from_dict(parse_kv(ckpt.config_text,
                                             source="<checkpoint>"))
        print(f"config hash: {cfg.digest()}")
        tt = cfg.parameterization == "tt"
        report = ModelReport.build(
            cfg.model, cfg.cell_input_dim(), cfg.hidden,
            in_modes=cfg.input_modes if tt else None,
            hidden_modes=cfg.hidden_modes if tt else None,
            rank=cfg.rank if tt else None,
            extra_params=max(0, _non_cell_total(ckpt)),
            baseline_hidden=cfg.baseline_hidden or None,
        )
        if report.cell_params != cell_total:
            raise ShapeError(
                f"checkpoint incompatible: stored cell params {cell_total} "
                f"differ from config's {report.cell_params}")
        for line in report.lines():
            print(line)
    else:
        print(f"cell params: {cell_total}")
    return 0


def _non_cell_total(ckpt) -> int:
    """Projection + head parameters stored in the container."""
    total = 0
    for name, (kind, _) in ckpt.records.items():
        if name.startswith(("opt:", "meta:", "map:cell.", "arr:cell.")):
            continue
        count, _ = _describe_record(ckpt, name, kind)
        total += count
    return total


_BENCH_INT = ("rank", "max_mode", "batch", "seed", "reps", "warmups",
              "compare_size")
_BENCH_DEFAULTS = dict(family="tt", sizes="1024,4096,16384", rank=4,
                       max_mode=16, batch=16, seed=0, reps=B.MIN_REPS,
                       warmups=B.MIN_WARMUPS, compare_backends=False,
                       compare_size=4096)


def _parse_bench_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    raw = parse_kv(text, source=str(path))
    cfg = dict(_BENCH_DEFAULTS)
    for key, value in raw.items():
        if key not in cfg:
            raise ConfigError(f"unknown bench field {key!r}")
        try:
            if key in _BENCH_INT:
                cfg[key] = int(value)
            elif key == "compare_backends":
                if value.lower() not in ("true", "false"):
                    raise ValueError
                cfg[key] = value.lower() == "true"
            else:
                cfg[key] = value
        except ValueError:
            raise ConfigError(f"field {key}: cannot parse {value!r}") from None
    if cfg["family"] not in ("tt", "dense", "both"):
        raise ConfigError("field family: must be tt, dense or both")
    try:
        cfg["sizes"] = tuple(int(tok) for tok in str(cfg["sizes"]).split(","))
    except ValueError:
        raise ConfigError(f"field sizes: cannot parse {cfg['sizes']!r}") from None
    if not cfg["sizes"] or any(s < 1 for s in cfg["sizes"]):
        raise ConfigError("field sizes: need at least one positive size")
    if cfg["reps"] < B.MIN_REPS or cfg["warmups"] < B.MIN_WARMUPS:
        raise ConfigError(f"field reps/warmups: protocol floor is "
                          f"{B.MIN_REPS} reps, {B.MIN_WARMUPS} warmups")
    cfg["hash"] = hashlib.sha256(text.encode()).hexdigest()[:12]
    return cfg


def cmd_bench(args) -> int:
    cfg = _parse_bench_config(args.config)
    lines = [f"# bench config hash {cfg['hash']}"]
    families = ("tt", "dense") if cfg["family"] == "both" else (cfg["family"],)
    for family in families:
        points = B.run_scaling_sweep(
            family, cfg["sizes"], rank=cfg["rank"], max_mode=cfg["max_mode"],
            batch=cfg["batch"], seed=cfg["seed"], reps=cfg["reps"],
            warmups=cfg["warmups"])
        lines += [p.as_line() for p in points]
        if len(points) >= 3:
            slope, resid = B.fit_loglog_slope(points)
            lines.append(f"fit family={family} slope={slope!r} resid={resid!r}")
    if cfg["compare_backends"]:
        for point in B.compare_backend_times(
                cfg["compare_size"], rank=cfg["rank"],
                max_mode=cfg["max_mode"], batch=cfg["batch"],
                seed=cfg["seed"], reps=cfg["reps"], warmups=cfg["warmups"]):
            lines.append(point.as_line())
    for line in lines:
        print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (FormatError, DataError, ShapeError, RangeError, SizeError,
            StateError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
