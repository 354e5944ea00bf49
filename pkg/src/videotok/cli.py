"""Command-line entry point.

Subcommands: gen, train, eval, gradcheck, bench, ablate. Every subcommand
accepts --config <path> pointing at a JSON file whose keys mirror the
long flag names; explicit flags win over config values, which win over
defaults. Exit codes: 0 success, 1 usage error, 2 run failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .data import (
    SyntheticTaskSpec,
    TASKS,
    generate,
    load_dataset,
    save_dataset,
    split_examples,
)
from .encoders import VARIANTS, build_encoder, desk_config
from .gradcheck import run_suite
from .training import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that signals usage problems with exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=TASKS, default="temporal_order")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--tokens", type=int, default=16, help="tokens per frame (N)")
    p.add_argument("--dim", type=int, default=64, help="channels (D)")
    p.add_argument("--cue-magnitude", type=float, default=1.0)
    p.add_argument("--noise-scale", type=float, default=0.1)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=VARIANTS, default="tokenlearner_pool")
    p.add_argument("--m", type=int, default=8, help="video token budget (M)")
    p.add_argument("--timestamp", choices=["on", "off", "auto"], default="auto")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=3e-3)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=500)


def build_parser(config_defaults: dict | None = None) -> _Parser:
    parser = _Parser(prog="videotok", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", type=Path, help="JSON file of flag defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, default=None, help="output directory")

    p_gen = sub.add_parser("gen", help="write token-grid files for a task")
    common(p_gen)
    _add_task_flags(p_gen)
    p_gen.add_argument("--n", type=int, default=100, help="number of examples")

    p_train = sub.add_parser("train", help="train an encoder + readout")
    common(p_train)
    _add_task_flags(p_train)
    _add_train_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval)
    _add_task_flags(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--variant", choices=VARIANTS, default="tokenlearner_pool")
    p_eval.add_argument("--m", type=int, default=8)
    p_eval.add_argument("--timestamp", choices=["on", "off", "auto"], default="auto")
    p_eval.add_argument("--n", type=int, default=500)
    p_eval.add_argument("--data", type=Path, help="directory of .tgrd files to use instead")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p_grad)
    p_grad.add_argument("--all", action="store_true", help="check every variant")
    p_grad.add_argument("--variant", choices=VARIANTS, default=None)

    p_bench = sub.add_parser("bench", help="throughput benchmark over token budgets")
    common(p_bench)
    p_bench.add_argument("--variants", default="tokenlearner_pool")
    p_bench.add_argument("--m-values", default="16,32,128")
    p_bench.add_argument("--frames", type=int, default=8)
    p_bench.add_argument("--tokens", type=int, default=16)
    p_bench.add_argument("--dim", type=int, default=64)
    p_bench.add_argument("--trials", type=int, default=5)
    p_bench.add_argument("--text-tokens", type=int, default=100)

    p_abl = sub.add_parser("ablate", help="train/eval sweep over variants and budgets")
    common(p_abl)
    _add_task_flags(p_abl)
    _add_train_flags(p_abl)
    p_abl.add_argument("--variants", default="mean_pool,tokenlearner_pool,grouped_ttm")
    p_abl.add_argument("--m-values", default="8")
    p_abl.add_argument("--seeds", default="0,1,2")
    p_abl.add_argument("--jobs", type=int, default=1)
    p_abl.add_argument("--timings", action="store_true",
                       help="fill wall-clock columns (breaks byte determinism)")

    if config_defaults:
        for action in sub.choices.values():
            known = {a.dest for a in action._actions}
            action.set_defaults(**{k: v for k, v in config_defaults.items() if k in known})
    return parser


def _task_spec(args, count: int) -> SyntheticTaskSpec:
    return SyntheticTaskSpec(
        task=args.task,
        frames=args.frames,
        tokens_per_frame=args.tokens,
        channels=args.dim,
        cue_magnitude=args.cue_magnitude,
        noise_scale=args.noise_scale,
        count=count,
        seed=args.seed,
    )


def _encoder_config(args):
    config = desk_config(
        args.variant, m=args.m, frames=args.frames,
        tokens_per_frame=args.tokens, channels=args.dim,
    )
    if args.timestamp != "auto":
        config = config.with_overrides(timestamp=args.timestamp == "on")
    return config


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        optimizer=args.optimizer,
        seed=args.seed,
        clip_norm=args.clip_norm,
    )


def _out_dir(args) -> Path:
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    spec = _task_spec(args, args.n)
    names = save_dataset(generate(spec), _out_dir(args), spec=spec)
    print(f"wrote {len(names)} grids + manifest.json to {_out_dir(args)}")
    return 0


def cmd_train(args) -> int:
    spec = _task_spec(args, args.train_size + args.test_size)
    train_set, test_set = split_examples(generate(spec), args.train_size, args.test_size)
    config = _encoder_config(args)
    result = train(config, spec.num_classes, train_set, _train_config(args))
    test_report = evaluate(result.encoder, result.readout, test_set,
                           config_echo={"split": "test", "variant": args.variant})
    out = _out_dir(args)
    with open(out / "history.jsonl", "w") as fh:
        for report in result.history:
            fh.write(report.to_json_line() + "\n")
        fh.write(test_report.to_json_line() + "\n")
    save_checkpoint(
        out / "checkpoint.npz", result.encoder, result.readout,
        meta={"variant": args.variant, "m": config.m, "task": args.task,
              "seed": args.seed},
    )
    print(f"final train accuracy {result.history[-1].accuracy:.4f}, "
          f"test accuracy {test_report.accuracy:.4f}")
    print(f"wrote checkpoint.npz and history.jsonl to {out}")
    return 0


def cmd_eval(args) -> int:
    if args.data is not None:
        examples = load_dataset(args.data)
        classes = max(e.label for e in examples) + 1
    else:
        spec = _task_spec(args, args.n)
        examples = generate(spec)
        classes = spec.num_classes
    encoder = build_encoder(_encoder_config(args), np.random.default_rng(args.seed))
    readout = load_checkpoint(args.checkpoint, encoder)
    if readout.classes < classes:
        raise ValueError(
            f"checkpoint predicts {readout.classes} classes, dataset has {classes}"
        )
    report = evaluate(encoder, readout, examples,
                      config_echo={"checkpoint": str(args.checkpoint)})
    print(report.to_json_line())
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import default_suite

    rows = default_suite()
    if not args.all and args.variant is not None:
        rows = [r for r in rows if r[1].variant == args.variant]
    results = run_suite(rows)
    for result in results:
        print(result)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} variants passed")
    return 0 if not failed else 2


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x != ""]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


def cmd_bench(args) -> int:
    report = bench_mod.bench_throughput(
        variants=_str_list(args.variants),
        m_values=_int_list(args.m_values),
        frames=args.frames,
        tokens_per_frame=args.tokens,
        channels=args.dim,
        trials=args.trials,
        cost_model=bench_mod.CostModel(text_tokens=args.text_tokens),
        seed=args.seed,
    )
    csv_text = report.to_csv()
    print(csv_text, end="")
    if args.out is not None:
        out = _out_dir(args)
        (out / "bench.csv").write_text(csv_text)
        print(f"wrote bench.csv to {out}", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    plan = bench_mod.AblationPlan(
        task=_task_spec(args, args.train_size + args.test_size),
        variants=_str_list(args.variants),
        m_values=_int_list(args.m_values),
        seeds=_int_list(args.seeds),
        train_size=args.train_size,
        test_size=args.test_size,
        train_config=_train_config(args),
    )
    runs_csv, curve_csv = bench_mod.run_ablation(
        plan, jobs=args.jobs, with_timings=args.timings
    )
    out = _out_dir(args)
    (out / "runs.csv").write_text(runs_csv)
    (out / "budget_curve.csv").write_text(curve_csv)
    print(runs_csv, end="")
    print(f"wrote runs.csv and budget_curve.csv to {out}", file=sys.stderr)
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def _load_config_defaults(argv: list[str]) -> dict:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return json.loads(Path(argv[i + 1]).read_text())
        if token.startswith("--config="):
            return json.loads(Path(token.split("=", 1)[1]).read_text())
    return {}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        defaults = _load_config_defaults(argv)
        parser = build_parser(defaults)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except Exception as err:
        print(f"videotok {args.command}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
