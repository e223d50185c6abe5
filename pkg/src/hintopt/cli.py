"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Errors go to
standard error as ``error[CODE]: message``.  Settings resolve as command-line
flag, then ``HINTOPT_*`` environment variable, then the ``--config`` file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from collections.abc import Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__
from .engine import ReplayEngine, SimEngine, generate_workload, load_workload, save_workload
from .errors import ConfigError, HintOptError
from .hints import HintMode, parse_hint
from .metrics import write_plot_data, write_report
from .orchestrator import OnlineLoop, RunConfig, read_run_logs, run, write_run_logs
from .generators import make_generator
from .reward import GrpoConfig
from .sft_dataset import build_sft_dataset, write_dataset
from .store import RecordStore, read_journal
from .training import TabularPolicy, qgrpo_train, write_training_log

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

ENV_PREFIX = "HINTOPT_"
DEFAULT_OUT = "out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        return tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _resolve(args: argparse.Namespace, config: dict[str, Any], name: str, default: Any, cast=str) -> Any:
    """flag > HINTOPT_<NAME> > config file > default."""
    flag = getattr(args, name, None)
    if flag is not None:
        return cast(flag)
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env is not None:
        try:
            return cast(env)
        except ValueError as exc:
            raise ConfigError(f"{ENV_PREFIX}{name.upper()}: {exc}") from exc
    if name in config:
        return cast(config[name])
    return default


def _out(args, config) -> Path:
    out = Path(_resolve(args, config, "out", DEFAULT_OUT))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate_hint(args, config) -> int:
    aliases = [a for a in args.aliases.split(",") if a] if args.aliases else None
    print(parse_hint(args.hint, aliases))
    return 0


def cmd_gen_workload(args, config) -> int:
    seed = _resolve(args, config, "seed", 0, int)
    wl = generate_workload(args.queries, args.min_aliases, args.max_aliases, seed=seed, noise=args.noise,
                           timeout_ms=args.timeout_ms, name=args.name)
    path = _out(args, config) / args.file
    save_workload(wl, path)
    print(path)
    return 0


def _engine_from(args):
    if args.fixtures:
        engine = ReplayEngine.from_directory(args.fixtures)
        return engine, [(sid, engine.sql(sid)) for sid in engine.sql_ids]
    if not args.workload:
        raise UsageError("one of --workload or --fixtures is required")
    wl = load_workload(args.workload)
    return SimEngine(wl), wl.items()


def _build_clock() -> str:
    # fixed stamp unless SOURCE_DATE_EPOCH is set, so output is reproducible
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH") or 0)
    return datetime.fromtimestamp(epoch, timezone.utc).isoformat()


def cmd_sft_build(args, config) -> int:
    engine, queries = _engine_from(args)
    entries, failures = build_sft_dataset(engine, queries, args.mode, args.timeout_ms, clock=_build_clock)
    path = _out(args, config) / args.file
    write_dataset(entries, path)
    for f in failures:
        print(f"skipped {f.sql_id}: {f.reason}", file=sys.stderr)
    print(f"{len(entries)} entries -> {path}")
    return 0


def cmd_train_qgrpo(args, config) -> int:
    section = config.get("train", {})
    seed = _resolve(args, config, "seed", 0, int)
    workload = args.workload or section.get("workload")
    if not workload:
        raise UsageError("train qgrpo needs --workload (or [train].workload in the config)")
    if args.workload is None and args.config:
        workload = Path(args.config).parent / workload
    engine = SimEngine(load_workload(workload))

    def pick(name, default, cast):
        value = getattr(args, name)
        return cast(value if value is not None else section.get(name, default))

    cfg = GrpoConfig(
        group_size=pick("group_size", 4, int), beta=pick("beta", 0.04, float),
        clip_epsilon=pick("clip_epsilon", 0.2, float), learning_rate=pick("learning_rate", 0.1, float),
        steps=pick("steps", 200, int), batch_size=section.get("batch_size"), seed=seed,
    )
    mode = pick("mode", "join_order", str)
    policy = TabularPolicy.uniform(engine, engine.sql_ids, mode)
    result = qgrpo_train(policy, engine, engine.sql_ids, cfg)
    out = _out(args, config)
    write_training_log(result.logs, out / "qgrpo_log.csv")
    greedy = {sid: str(result.policy.greedy(sid)) for sid in engine.sql_ids}
    (out / "qgrpo_policy.json").write_text(json.dumps(greedy, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    last = result.logs[-1] if result.logs else None
    if last is not None:
        print(f"step {last.step}: mean_reward={last.mean_reward:.4f} kl={last.kl:.6f} best_prob={last.best_prob:.4f}")
    return 0


def _run_config(args, config, iterations: int | None = None) -> RunConfig:
    if not args.config:
        raise UsageError("this command needs --config")
    seed = _resolve(args, config, "seed", 0, int)
    overrides = {"iterations": iterations} if iterations is not None else {}
    if getattr(args, "iterations", None) is not None and iterations is None:
        overrides["iterations"] = args.iterations
    cfg = RunConfig.from_toml(args.config, seed=seed, overrides=overrides)
    remote = {key: os.environ[ENV_PREFIX + key.upper()] for key in ("endpoint", "model")
              if os.environ.get(ENV_PREFIX + key.upper())}
    if remote:
        cfg.generator = dataclasses.replace(cfg.generator, **remote)
    return cfg


def cmd_run(args, config) -> int:
    cfg = _run_config(args, config)
    out = _out(args, config)
    journal = out / "store.jsonl"
    if journal.exists():
        journal.unlink()
    store = RecordStore(dim=cfg.embedding_dim, journal_path=journal)
    logs = run(cfg, store=store)
    jsonl, summary = write_run_logs(logs, out)
    last = logs[-1]
    print(f"{len(logs)} iteration logs -> {jsonl}")
    print(f"final: ret={last.ret:.4f} best_ret={last.best_ret:.4f} hr={'n/a' if last.hr is None else f'{last.hr:.4f}'}")
    return 0


def cmd_prompt_preview(args, config) -> int:
    if args.iteration < 1:
        raise UsageError("--iteration must be >= 1")
    cfg = _run_config(args, config, iterations=max(1, args.iteration - 1))
    workload = next((n for n, w in cfg.workloads.items() if args.sql_id in w.queries), None)
    if workload is None:
        raise UsageError(f"unknown sql_id {args.sql_id!r}")
    engine = SimEngine(cfg.workloads[workload])
    store = RecordStore(dim=cfg.embedding_dim)
    loop = OnlineLoop(store, make_generator(cfg.generator), cfg.k, cfg.metric, cfg.mode)
    queries = cfg.workloads[workload].items()
    for it in range(1, args.iteration):
        loop.iteration(engine, it, workload, queries, cfg.timeout_for(workload))
    sql = cfg.workloads[workload].queries[args.sql_id].sql
    if not store.has_baseline(args.sql_id):
        loop.initialize(engine, args.iteration, workload, args.sql_id, sql, cfg.timeout_for(workload))
    bundle = loop.build(engine, args.iteration, args.sql_id, sql).prompt
    path = _out(args, config) / f"prompt_{args.sql_id}_{args.iteration}.txt"
    path.write_text(bundle.rendered, encoding="utf-8")
    sys.stdout.write(bundle.rendered)
    return 0


def cmd_store_dump(args, config) -> int:
    store = RecordStore.load(args.journal)
    rows = ["sql_id\titeration\texecution_time_ms\tplan"]
    for sid in store.sql_ids:
        rec = store.best(sid)
        rows.append(f"{sid}\t{rec.iteration}\t{rec.execution_time_ms:.3f}\t{rec.plan}")
    text = "\n".join(rows) + "\n"
    (_out(args, config) / "store_best.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_store_load(args, config) -> int:
    records = list(read_journal(args.journal))
    store = RecordStore.load(args.journal)
    path = _out(args, config) / "store.jsonl"
    store.dump(path)
    print(f"{len(records)} records, {len(store.sql_ids)} queries -> {path}")
    return 0


def cmd_report(args, config) -> int:
    logs = read_run_logs(args.log)
    out = _out(args, config)
    if args.what == "plot-data":
        paths = write_plot_data(logs, out / "plot_data")
        print(f"{len(paths)} series -> {out / 'plot_data'}")
        return 0
    report_path, _ = write_report(logs, out)
    data = json.loads(report_path.read_text(encoding="utf-8"))
    for variant in ("best_over_iterations", "final_iteration"):
        m = data[variant]
        hr = "n/a" if m["hr"] is None else f"{m['hr']:.4f}"
        print(f"{variant}: ret={m['ret']:.4f} overall_gain={m['overall_gain']:.4f} "
              f"filtered_gain={m['filtered_gain']:.4f} hr={hr}")
    return 0


# ---------------------------------------------------------------------------
# parser


SUBCOMMANDS = (
    ("sft build", "build the supervised (prompt, reference hint) dataset"),
    ("train qgrpo", "group-relative policy optimization on the simulator"),
    ("run", "run the online loop from a config"),
    ("store dump", "print the best record per query from a journal"),
    ("store load", "validate a journal and write a normalized copy"),
    ("prompt preview", "print the exact prompt for a query at an iteration"),
    ("report", "summary metrics or plot data from a run log"),
    ("gen-workload", "generate a simulated workload with planted optima"),
    ("validate-hint", "parse a hint and print its canonical form"),
)
_EPILOG = "commands:\n" + "\n".join(f"  {name:<16}{text}" for name, text in SUBCOMMANDS) + (
    "\n\nexit codes: 0 success, 1 usage error, 2 runtime failure"
)


def _global_flags(default: Any) -> argparse.ArgumentParser:
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--config", default=default, help="TOML config file")
    flags.add_argument("--seed", type=int, default=default, help="random seed")
    flags.add_argument("--out", default=default, help=f"output directory (default: {DEFAULT_OUT})")
    flags.add_argument("--verbose", action="store_const", const=True, default=default, help="debug logging")
    return flags


def build_parser() -> argparse.ArgumentParser:
    # Subcommands repeat the global flags with suppressed defaults so that a
    # flag given before the subcommand is not reset by the subparser.
    top = _global_flags(None)
    common = _global_flags(argparse.SUPPRESS)

    parser = _Parser(
        prog="hintopt",
        description="Plan-hint search with retrieval-augmented prompts and latency feedback.",
        parents=[top],
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_text, **kw):
        return sub.add_parser(name, help=help_text, parents=[common], **kw)

    def engine_args(p):
        p.add_argument("--workload", help="simulated workload file (JSON or TOML)")
        p.add_argument("--fixtures", help="directory of recorded EXPLAIN JSON + SQL files")
        p.add_argument("--timeout-ms", type=float, default=10_000.0)

    p = add("sft", "supervised dataset tools")
    sft_sub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser, required=True)
    p = sft_sub.add_parser("build", help="build the (prompt, reference hint) dataset", parents=[common])
    engine_args(p)
    p.add_argument("--mode", choices=[m.value for m in HintMode], default="full_plan")
    p.add_argument("--file", default="sft_dataset.jsonl")
    p.set_defaults(func=cmd_sft_build)

    p = add("train", "offline training")
    train_sub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser, required=True)
    p = train_sub.add_parser("qgrpo", help="group-relative policy optimization on the simulator", parents=[common])
    p.add_argument("--workload")
    p.add_argument("--mode", choices=[m.value for m in HintMode], default=None)
    p.add_argument("--steps", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--clip-epsilon", type=float)
    p.add_argument("--learning-rate", type=float)
    p.set_defaults(func=cmd_train_qgrpo)

    p = add("run", "run the online loop from a config")
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_run)

    p = add("store", "record-store journals")
    store_sub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser, required=True)
    for action, func, text in (("dump", cmd_store_dump, "print the live best record per query"),
                               ("load", cmd_store_load, "validate a journal and write a normalized copy")):
        sp = store_sub.add_parser(action, help=text, parents=[common])
        sp.add_argument("journal")
        sp.set_defaults(func=func)

    p = add("prompt", "prompt tools")
    prompt_sub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser, required=True)
    p = prompt_sub.add_parser("preview", help="print the prompt for a query at an iteration", parents=[common])
    p.add_argument("--sql-id", required=True)
    p.add_argument("--iteration", type=int, default=2)
    p.set_defaults(func=cmd_prompt_preview)

    p = add("report", "metrics over a run log")
    p.add_argument("what", nargs="?", choices=["summary", "plot-data"], default="summary")
    p.add_argument("--log", required=True, help="run_log.jsonl written by 'run'")
    p.set_defaults(func=cmd_report)

    p = add("gen-workload", "generate a simulated workload with planted optima")
    p.add_argument("--queries", type=int, default=10)
    p.add_argument("--min-aliases", type=int, default=3)
    p.add_argument("--max-aliases", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--timeout-ms", type=float, default=10_000.0)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--file", default="workload.json")
    p.set_defaults(func=cmd_gen_workload)

    p = add("validate-hint", "parse a hint and print its canonical form")
    p.add_argument("hint")
    p.add_argument("--aliases", help="comma-separated aliases the hint may use")
    p.set_defaults(func=cmd_validate_hint)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a command is required (see --help)")
        args.config = args.config or os.environ.get(ENV_PREFIX + "CONFIG")
        config = _load_config(args.config)
        verbose = _resolve(args, config, "verbose", False, lambda v: str(v).lower() in ("1", "true", "yes"))
        logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args, config)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (None, 0) else 1
    except HintOptError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[E000]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
