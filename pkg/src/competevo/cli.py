"""Command-line entry point: ``competevo {init-config,train,evaluate,replay,inspect-morph}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .arena import TRACE_FIELDS, TaskKind
from .config import RunConfig, dump_config, load_config
from .errors import (
    CheckpointError,
    CompetEvoError,
    ConfigError,
    NumericalError,
    PolicyLookupError,
)
from .morphology import PARAM_LABELS, mirror_morph
from .pool import PLAYERS, PolicyPool
from .rollout import eval_morph
from .selfplay import load_checkpoint, new_run, train
from .tournament import (
    DuelSpec,
    EvalMode,
    PolicyRef,
    cross_table,
    curve_table,
    duel,
    resolve,
    stats_table,
    win_rate_curve,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("competevo")


def _out_root(path: str) -> str:
    root = os.environ.get("COMPETEVO_DIR")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _load_run_config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = load_config(args.config) if args.config else (base or RunConfig())
    changes = {}
    if args.scale is not None:
        changes["scale"] = args.scale
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if getattr(args, "generations", None) is not None:
        changes["selfplay"] = dataclasses.replace(cfg.selfplay, max_generations=args.generations)
    try:
        return cfg.replace(**changes) if changes else cfg
    except CompetEvoError as exc:
        raise ConfigError(f"command-line override: {exc}") from None


def cmd_init_config(args) -> int:
    text = dump_config(RunConfig())
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return EXIT_OK


def _trim_metrics(out_dir: str, generation: int) -> None:
    path = os.path.join(out_dir, "metrics.jsonl")
    if not os.path.exists(path):
        return
    with open(path) as fh:
        keep = [ln for ln in fh if ln.strip() and json.loads(ln)["generation"] < generation]
    with open(path, "w") as fh:
        fh.writelines(keep)


def cmd_train(args) -> int:
    # resuming without --config: the checkpoint's own snapshot is authoritative
    from_snapshot = args.resume and not args.config
    cfg = None if from_snapshot else _load_run_config(args)
    out = _out_root(args.out or (cfg or RunConfig()).out_dir)
    has_ckpt = os.path.exists(os.path.join(out, "state.json"))
    if args.resume and has_ckpt:
        run = load_checkpoint(out, expect=cfg)
        if from_snapshot:
            run.config = _load_run_config(args, run.config)
        _trim_metrics(out, run.generation)
        log.info("resuming %s at generation %d", out, run.generation)
    elif has_ckpt:
        raise CheckpointError(f"{out} already holds a run; pass --resume or choose another --out")
    else:
        cfg = cfg or _load_run_config(args)
        os.makedirs(out, exist_ok=True)
        run = new_run(cfg)
        _trim_metrics(out, 0)
    train(run, out_dir=out)
    print(f"trained to generation {run.generation}; checkpoint in {out}")
    return EXIT_OK


def _pools_from_args(args) -> dict:
    pools = {}
    if args.checkpoint:
        for player in PLAYERS:
            pools[player] = PolicyPool.load(os.path.join(args.checkpoint, f"pool_{player}.bin"))
    for item in args.pool or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--pool expects NAME=PATH, got {item!r}")
        pools[name] = PolicyPool.load(path)
    if not pools:
        raise PolicyLookupError("no pools given; use --checkpoint DIR or --pool NAME=PATH")
    return pools


def _eval_env(args):
    """Task, physics and morph constants for evaluation commands."""
    cfg = None
    if args.config:
        cfg = load_config(args.config)
    elif args.checkpoint and os.path.exists(os.path.join(args.checkpoint, "config.yaml")):
        cfg = load_config(os.path.join(args.checkpoint, "config.yaml"))
    cfg = cfg or RunConfig()
    task = TaskKind(args.task) if args.task else cfg.task
    return task, cfg.physics, cfg.morphology


def _write(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def cmd_evaluate(args) -> int:
    pools = _pools_from_args(args)
    task, physics, consts = _eval_env(args)
    mode = EvalMode(args.mode)
    if args.curve:
        a, b = args.curve
        curve = win_rate_curve(a, b, pools, task, args.stride, args.rounds, seed=args.seed or 0,
                               eval_mode=mode, physics=physics, consts=consts)
        _write(curve_table(curve), args.out)
        return EXIT_OK
    if args.cross:
        refs = [PolicyRef.parse(r) for r in args.cross]
        table = cross_table(refs, pools, task, args.rounds, seed=args.seed or 0, eval_mode=mode,
                            physics=physics, consts=consts)
        _write(table.to_tsv(), args.out)
        return EXIT_OK
    pairs = args.pair or [["alpha:latest", "beta:latest"]]
    rows = []
    for a, b in pairs:
        ra, rb = PolicyRef.parse(a), PolicyRef.parse(b)
        spec = DuelSpec(ra, rb, task, args.rounds, mode, args.seed or 0)
        stats = duel(spec, pools, physics, consts)
        rows.append((resolve(ra, pools)[2].label, resolve(rb, pools)[2].label, stats))
    _write(stats_table(rows), args.out)
    return EXIT_OK


def cmd_replay(args) -> int:
    pools = _pools_from_args(args)
    task, physics, consts = _eval_env(args)
    a, b = args.pair[0] if args.pair else ("alpha:latest", "beta:latest")
    ra, rb = PolicyRef.parse(a), PolicyRef.parse(b)
    trace = []
    spec = DuelSpec(ra, rb, task, args.round + 1, EvalMode(args.mode), args.seed or 0)
    duel(spec, pools, physics, consts, trace_round=args.round, trace=trace)
    morphs = []
    for slot, ref in enumerate((ra, rb)):
        pool, entry, _ = resolve(ref, pools)
        m = eval_morph(entry.params, pool.evolvable, pool.morph_seed, consts)
        if slot == 1:
            m = mirror_morph(m)
        morphs.append(m)
    lines = [
        f"# task\t{task.value}",
        f"# morph_a\t{','.join(repr(float(x)) for x in morphs[0].values)}",
        f"# morph_b\t{','.join(repr(float(x)) for x in morphs[1].values)}",
        "# " + "\t".join(TRACE_FIELDS),
        *trace,
    ]
    out = args.out or "replay.tsv"
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(trace)} steps to {out}")
    return EXIT_OK


def cmd_inspect_morph(args) -> int:
    pool = PolicyPool.load(args.pool)
    entry = pool.get(args.version)
    m = eval_morph(entry.params, pool.evolvable, pool.morph_seed, load_config(args.config).morphology
                   if args.config else RunConfig().morphology)
    for k, leg in enumerate(m.legs()):
        cells = [f"{lab}={v:.4f}({v - 1.0:+.4f})" for lab, v in zip(PARAM_LABELS, leg)]
        print(f"leg{k}\t" + "\t".join(cells))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="competevo", description="Competitive morphology/tactics co-evolution.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-config", help="write the default configuration")
    p.add_argument("--out")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("train", help="run warm-up and self-play generations")
    p.add_argument("--config")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--generations", type=int, help="override max_generations")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    def eval_common(p):
        p.add_argument("--checkpoint", help="run directory; exposes pools 'alpha' and 'beta'")
        p.add_argument("--pool", action="append", metavar="NAME=PATH")
        p.add_argument("--config")
        p.add_argument("--task", choices=[t.value for t in TaskKind])
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", default=EvalMode.DETERMINISTIC.value, choices=[m.value for m in EvalMode])
        p.add_argument("--pair", nargs=2, action="append", metavar=("A", "B"))
        p.add_argument("--out")

    p = sub.add_parser("evaluate", help="duels, cross tables and win-rate curves")
    eval_common(p)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--curve", nargs=2, metavar=("POOL_A", "POOL_B"))
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--cross", nargs="+", metavar="REF")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replay", help="write a per-step trace of one duel round")
    eval_common(p)
    p.add_argument("--round", type=int, default=0)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("inspect-morph", help="print a policy's evaluation-mode design")
    p.add_argument("--pool", required=True)
    p.add_argument("--version", default="latest")
    p.add_argument("--config")
    p.set_defaults(func=cmd_inspect_morph)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CheckpointError, PolicyLookupError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CompetEvoError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
