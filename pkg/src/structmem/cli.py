"""Command-line entry point: ``structmem {train,gradcheck,taskdump,plotdata,inspect}``.

Exit codes: 0 success, 1 configuration error, 2 training aborted, 3 check failed.
"""

import argparse
import csv
import datetime
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import read_manifest, save_checkpoint
from .config import coerce, field_types, format_flat, read_config_file
from .errors import ConfigError, TrainingAborted
from .gradcheck import check_variant
from .tasks import TaskConfig, dump_episode, episode_seed
from .trainer import (ExperimentConfig, sampled, summarize, write_csv, write_summary,
                      run_experiment)

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_CHECK = 0, 1, 2, 3
OUT_ENV = "STRUCTMEM_OUT"

log = logging.getLogger("structmem")

# flag dest -> config key, for flags that map one-to-one
FLAG_KEYS = {
    "variant": "variant", "task": "task", "mem_slots": "mem_slots", "mem_width": "mem_width",
    "read_heads": "read_heads", "write_heads": "write_heads", "mix_a": "mix_a", "mix_b": "mix_b",
    "mix_mode": "mix_mode", "controller_width": "controller_width", "layers": "layers",
    "lr": "lr", "momentum": "momentum", "decay": "decay", "clip": "clip",
    "max_iters": "max_iters", "sample_every": "sample_every",
    "copy_min": "copy_min", "copy_max": "copy_max",
    "recall_min": "recall_min", "recall_max": "recall_max",
    "share_head_params": "share_head_params",
}


def _model_flags(p):
    p.add_argument("--variant", choices=["ntm", "ntm1", "ntm2", "ntm3"])
    p.add_argument("--read-heads", type=int)
    p.add_argument("--write-heads", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--share-head-params", action="store_const", const=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="structmem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run experiments, one per seed")
    _model_flags(t)
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--task", choices=["copy", "recall"])
    t.add_argument("--mem-slots", type=int)
    t.add_argument("--mem-width", type=int)
    t.add_argument("--mix-a", type=float)
    t.add_argument("--mix-b", type=float)
    t.add_argument("--mix-mode", choices=["fixed", "learned"])
    t.add_argument("--controller-width", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--decay", type=float)
    t.add_argument("--clip", type=float)
    t.add_argument("--max-iters", type=int)
    t.add_argument("--sample-every", type=int)
    t.add_argument("--copy-min", type=int)
    t.add_argument("--copy-max", type=int)
    t.add_argument("--recall-min", type=int)
    t.add_argument("--recall-max", type=int)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    t.add_argument("--seeds", default="1", help="count N (seeds 1..N) or comma list")
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")

    g = sub.add_parser("gradcheck", help="finite-difference check of full-model gradients")
    _model_flags(g)
    g.add_argument("--steps", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("taskdump", help="print episodes as 0/1 grids")
    d.add_argument("--task", choices=["copy", "recall"], default="copy")
    d.add_argument("--count", type=int, default=1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--copy-min", type=int, default=1)
    d.add_argument("--copy-max", type=int, default=20)
    d.add_argument("--recall-min", type=int, default=2)
    d.add_argument("--recall-max", type=int, default=6)

    pd = sub.add_parser("plotdata", help="reduce per-seed CSVs to median/min/max series")
    pd.add_argument("csvs", nargs="+")
    pd.add_argument("--column", default="loss_per_bit")
    pd.add_argument("--output", "-o")

    ins = sub.add_parser("inspect", help="print a checkpoint manifest")
    ins.add_argument("checkpoint")
    return parser


# ---------------------------------------------------------------------------
# train

def parse_seeds(text):
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        n = int(text)
    except ValueError:
        raise ConfigError(f"bad --seeds value {text!r}", key="seeds")
    if n < 1:
        raise ConfigError("--seeds must be >= 1", key="seeds")
    return list(range(1, n + 1))


def resolve_config(args):
    """Merge defaults < config file < command line. Returns (values, sources)."""
    defaults = ExperimentConfig().flat()
    values = dict(defaults)
    sources = {k: "default" for k in values}
    if args.config:
        for k, v in read_config_file(args.config).items():
            values[k], sources[k] = v, f"file:{args.config}"
    for dest, key in FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key], sources[key] = coerce(key, v), "flag"
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()], sources[k.strip()] = coerce(k.strip(), v), "flag"
    # explicit coefficients without an explicit mode mean "pin them"
    if sources["mix_mode"] == "default" and "flag" in (sources["mix_a"], sources["mix_b"]):
        values["mix_mode"], sources["mix_mode"] = "fixed", "implied by --mix-a/--mix-b"
    if sources.get("layers") == "default":
        values["layers"] = 0  # let the variant pick its default depth
    return values, sources


def build_id():
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(path, values, sources, seeds, out_dir):
    lines = [f"# run manifest written {datetime.datetime.now().isoformat(timespec='seconds')}",
             f"build = {build_id()}", f"seeds = {','.join(map(str, seeds))}",
             f"output_dir = {out_dir}"]
    for k, v in values.items():
        lines.append(f"{k} = {v!r}  # {sources[k]}" if isinstance(v, float)
                     else f"{k} = {v}  # {sources[k]}")
    Path(path).write_text("\n".join(lines) + "\n")


def run_dir_name(values, seed):
    return f"{values['variant']}-{values['task']}-seed{seed}"


def train_one(values, seed, run_dir):
    """Run one seed into ``run_dir``; returns (seed, exit code, message)."""
    flat = dict(values, seed=seed)
    config = ExperimentConfig.from_flat(flat)
    run_dir.mkdir(parents=True, exist_ok=True)
    records = []
    try:
        result = run_experiment(config, on_record=records.append)
    except TrainingAborted as exc:
        samples = sampled(records, config.train.sample_every)
        write_csv(run_dir / "records.csv", samples)
        summary = summarize(samples, config.train, seed, config.hash())
        summary["aborted"] = str(exc)
        write_summary(run_dir / "summary.txt", summary)
        return seed, EXIT_ABORT, str(exc)
    write_csv(run_dir / "records.csv", result.samples)
    write_summary(run_dir / "summary.txt", result.summary)
    save_checkpoint(run_dir / "checkpoint.bin", result.state, config.flat())
    return seed, EXIT_OK, f"convergence={result.summary['convergence_iteration']}"


def cmd_train(args):
    values, sources = resolve_config(args)
    seeds = parse_seeds(args.seeds)
    ExperimentConfig.from_flat(dict(values, seed=seeds[0]))  # validate before writing anything
    out_root = Path(args.out or os.environ.get(OUT_ENV, "runs"))
    dirs = {s: out_root / run_dir_name(values, s) for s in seeds}
    for s, d in dirs.items():
        d.mkdir(parents=True, exist_ok=True)
        write_manifest(d / "manifest.txt", dict(values, seed=s), dict(sources, seed="flag"),
                       seeds, d)
    if args.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            outcomes = list(pool.map(train_one, [values] * len(seeds), seeds,
                                     [dirs[s] for s in seeds]))
    else:
        outcomes = [train_one(values, s, dirs[s]) for s in seeds]
    code = EXIT_OK
    for seed, rc, msg in outcomes:
        print(f"seed {seed}: {'ok' if rc == EXIT_OK else 'ABORTED'} {msg}")
        code = max(code, rc)
    return code


# ---------------------------------------------------------------------------
# utilities

def cmd_gradcheck(args):
    overrides = {}
    for key in ("read_heads", "write_heads", "layers"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.share_head_params:
        overrides["share_head_params"] = True
    report = check_variant(args.variant or "ntm1", steps=args.steps, seed=args.seed, **overrides)
    groups = {}
    for name, err in report.errors.items():
        group = name.split(".")[0]
        groups[group] = max(groups.get(group, 0.0), err)
    for group, err in sorted(groups.items()):
        print(f"{group:8s} max relative error {err:.3e}")
    if report.passed:
        print(f"PASS (tolerance {report.tolerance:g})")
        return EXIT_OK
    bad = sorted(((e, n) for n, e in report.errors.items() if e >= report.tolerance), reverse=True)
    for err, name in bad:
        print(f"FAIL {name}: {err:.3e}")
    return EXIT_CHECK


def cmd_taskdump(args):
    task = TaskConfig(task=args.task, copy_min=args.copy_min, copy_max=args.copy_max,
                      recall_min=args.recall_min, recall_max=args.recall_max)
    task.validate()
    for i in range(args.count):
        ep = task.generate(episode_seed(args.seed, i + 1, task.task))
        print(dump_episode(ep, i))
    return EXIT_OK


def cmd_plotdata(args):
    series = {}
    for path in args.csvs:
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                if args.column not in row:
                    raise ConfigError(f"{path}: no column {args.column!r}", key="column")
                series.setdefault(int(row["iteration"]), []).append(float(row[args.column]))
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["iteration", "median", "min", "max", "runs"])
        for it in sorted(series):
            v = series[it]
            w.writerow([it, repr(float(np.median(v))), repr(min(v)), repr(max(v)), len(v)])
    finally:
        if args.output:
            out.close()
    return EXIT_OK


def cmd_inspect(args):
    header, entries, start = read_manifest(args.checkpoint)
    for k, v in header.items():
        print(f"{k} = {v}")
    total = 0
    for name, shape, off, count in entries:
        print(f"{name:28s} {str(shape):14s} offset={off} count={count}")
        total += count
    print(f"{len(entries)} tensors, {total} values, blob at byte {start}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "gradcheck": cmd_gradcheck, "taskdump": cmd_taskdump,
            "plotdata": cmd_plotdata, "inspect": cmd_inspect}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        where = f" [{exc.key}]" if exc.key else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
