"""Command-line entry point: ``metavrp <command> [options]``.

Commands: generate, train, finetune, eval, benchmark, grad-analysis.
Exit codes: 0 on success, 2 on usage or input errors, 3 on runtime or
external-solver failures.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from . import config as C
from .errors import (ExternalSolverError, InvalidArgument, MetaVRPError, ParseError,
                     UnsupportedFormat)
from .instances import (TaskSpec, make_instances, parse_benchmark, parse_tour_file,
                        read_instances, unit_scaled, write_instances, write_tsplib)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

# published optima for a few common benchmark files (euc2d costs)
KNOWN_OPTIMA = {
    "kroA100": 21282, "kroB100": 22141, "kroC100": 20749, "kroD100": 21294, "kroE100": 22068,
    "eil51": 426, "berlin52": 7542, "st70": 675, "eil76": 538, "pr76": 108159, "rd100": 7910,
    "eil101": 629, "lin105": 14379, "ch130": 6110, "ch150": 6528, "pcb442": 50778,
    "X-n101-k25": 27591,
}


# -- helpers ------------------------------------------------------------------

def _resolve(args, **forced) -> dict:
    overrides = C.parse_overrides(args.set)
    overrides.update({k: v for k, v in forced.items() if v is not None})
    return C.resolve(args.preset, args.config, overrides)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _init_params(cfg: dict):
    from .policy import init_params

    return init_params(C.model_config(cfg), rng=cfg["model.init_seed"])


def _load_params(path, cfg):
    if path is None:
        return _init_params(cfg), cfg, None
    ck = ckpt_io.load(path)
    return ck.state.params, ck.config or cfg, ck


def _reference(instances, cfg):
    from .oracles import reference_solve

    t0 = time.perf_counter()
    res = [reference_solve(inst, cfg["scheduler.oracle_budget"]) for inst in instances]
    return [r.cost for r in res], res[0].solver_tag, time.perf_counter() - t0


def _write_report(out: Path, rows, chash: str) -> str:
    from .report import to_csv, to_markdown

    (out / "report.csv").write_text(to_csv(rows))
    md = to_markdown(rows, chash)
    (out / "report.md").write_text(md)
    return md


# -- commands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    tasks = [TaskSpec.parse(t) for t in (args.task or [])]
    if not tasks:
        raise InvalidArgument("generate needs at least one --task")
    if args.count < 1:
        raise InvalidArgument("--count must be >= 1")
    seed = 0 if args.seed is None else args.seed
    instances = []
    for k, task in enumerate(tasks):
        instances += make_instances(task, args.count, seed + k)
    if args.format == "jsonl":
        out = Path(args.out or "instances.jsonl")
        out.parent.mkdir(parents=True, exist_ok=True)
        write_instances(instances, out)
    else:
        out = _out_dir(args, "instances")
        for i, inst in enumerate(instances):
            inst.name = f"{inst.task.name.replace(':', '_')}_{i:05d}"
            ext = ".tsp" if inst.problem == "tsp" else ".vrp"
            write_tsplib(inst, out / (inst.name + ext))
    print(f"wrote {len(instances)} instances to {out}")
    return EXIT_OK


def _training_setup(cfg, out: Path):
    from .scheduler import build_pool, load_pool, save_pool

    sched = C.scheduler_state(cfg)
    pool_dir = out / "pool"
    if (pool_dir / "pool_oracle.json").exists():
        load_pool(sched, pool_dir)
    else:
        build_pool(sched, cfg["scheduler.pool_seed"], cfg["scheduler.oracle_budget"])
        save_pool(sched, pool_dir)
    return sched


def cmd_train(args) -> int:
    from .meta import MetaState, meta_train, metrics_writer

    forced = {"outer.rule": args.rule, "inner.K": args.K, "outer.total_iters": args.iters,
              "train.M": args.M}
    if args.seed is not None:
        forced["train.seed"] = args.seed
    resume = ckpt_io.load(args.resume) if args.resume else None
    if resume is not None:
        overrides = C.parse_overrides(args.set)
        overrides.update({k: v for k, v in forced.items() if v is not None})
        cfg = dict(resume.config)
        C.apply_overrides(cfg, overrides)
    else:
        cfg = _resolve(args, **forced)
    out = _out_dir(args, "runs/train")
    (out / "config.txt").write_text(C.dump(cfg))
    chash = C.config_hash(cfg)
    sched = _training_setup(cfg, out)
    if resume is not None:
        state = resume.state
        for key in ("weights", "gaps"):
            if key in resume.scheduler:
                setattr(sched, key, resume.scheduler[key])
        sched.refreshed_at = resume.scheduler.get("refreshed_at")
    else:
        state = MetaState(_init_params(cfg), 0, cfg["train.seed"])
    outer, inner, settings = C.outer_config(cfg), C.inner_config(cfg), C.train_settings(cfg)
    log = metrics_writer(out / "metrics.jsonl")

    def save(st, name=None):
        path = out / (name or f"ckpt_{st.e:07d}.ckpt")
        ckpt_io.save(path, ckpt_io.Checkpoint(
            st, cfg, {"weights": sched.weights, "gaps": sched.gaps,
                      "refreshed_at": sched.refreshed_at}))

    t0 = time.perf_counter()
    try:
        state = meta_train(state, sched, outer, inner, settings, log, save)
    finally:
        log.close()
    save(state, "final.ckpt")
    print(f"trained {state.e} iterations in {time.perf_counter() - t0:.1f}s "
          f"(config {chash}); checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .meta import few_shot_adapt

    cfg = _resolve(args)
    params, cfg, ck = _load_params(args.checkpoint, cfg)
    task = TaskSpec.parse(args.task or cfg["eval.task"])
    K = cfg["finetune.K"] if args.K is None else args.K
    pool = cfg["finetune.pool"] if args.pool is None else args.pool
    seed = 0 if args.seed is None else args.seed
    adapted = few_shot_adapt(params, task, K, pool, np.random.default_rng(seed),
                             lr=cfg["finetune.lr"], M=cfg["finetune.M"],
                             augment=cfg["finetune.augment"])
    from .meta import MetaState

    out = Path(args.out or "finetuned.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    e = ck.state.e if ck else 0
    ckpt_io.save(out, ckpt_io.Checkpoint(MetaState(adapted, e, seed), cfg,
                                         extra={"finetune": {"task": task.name, "K": K, "pool": pool}}))
    print(f"fine-tuned on {task.name} (K={K}, pool={pool}); wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .meta import few_shot_adapt
    from .oracles import relative_gap
    from .policy import greedy_costs
    from .report import ResultRow

    cfg = _resolve(args)
    params, cfg, _ = _load_params(args.checkpoint, cfg)
    if args.augment8:
        cfg = dict(cfg, **{"eval.augment8": True})
    chash = C.config_hash(cfg)
    if args.instances:
        instances = read_instances(args.instances)
        task = instances[0].task
    else:
        task = TaskSpec.parse(args.task or cfg["eval.task"])
        seed = cfg["eval.seed"] if args.seed is None else args.seed
        instances = make_instances(task, args.count or cfg["eval.count"], seed)
    ref, tag, ref_time = _reference(instances, cfg)
    rows = [ResultRow(tag, task.name, float(np.mean(ref)), 0.0, ref_time, len(ref), chash)]
    per_inst = {"reference": ref}

    def run(name, p, augment):
        t0 = time.perf_counter()
        costs = greedy_costs(instances, p, augment=augment)
        rows.append(ResultRow(name, task.name, float(np.mean(costs)), relative_gap(costs, ref),
                              time.perf_counter() - t0, len(costs), chash))
        per_inst[name] = costs.tolist()

    run("zero-shot", params, False)
    if cfg["eval.augment8"]:
        run("zero-shot x8", params, True)
    if args.few_shot:
        pool = args.pool or cfg["finetune.pool"]
        t0 = time.perf_counter()
        adapted = few_shot_adapt(params, task, args.few_shot, pool,
                                 np.random.default_rng([cfg["eval.seed"], 1]),
                                 lr=cfg["finetune.lr"], M=cfg["finetune.M"],
                                 augment=cfg["finetune.augment"])
        adapt_time = time.perf_counter() - t0
        name = f"few-shot K={args.few_shot}"
        run(name, adapted, bool(cfg["eval.augment8"]))
        rows[-1].time_s += adapt_time
    out = _out_dir(args, "runs/eval")
    md = _write_report(out, rows, chash)
    with open(out / "per_instance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = list(per_inst)
        w.writerow(["index"] + names)
        for i in range(len(instances)):
            w.writerow([i] + [repr(float(per_inst[n][i])) for n in names])
    print(md, end="")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .env import solution_cost
    from .oracles import reference_solve
    from .policy import greedy_solutions
    from .report import ResultRow

    cfg = _resolve(args)
    params, cfg, _ = _load_params(args.checkpoint, cfg)
    chash = C.config_hash(cfg)
    root = Path(args.dir)
    if not root.is_dir():
        raise InvalidArgument(f"{root} is not a directory")
    rows = []
    for path in sorted(p for p in root.iterdir() if p.suffix.lower() in (".tsp", ".vrp")):
        try:
            inst = parse_benchmark(path)
        except (UnsupportedFormat, ParseError) as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
            continue
        if inst.problem != params.config.problem:
            print(f"warning: skipping {path.name}: model solves {params.config.problem}",
                  file=sys.stderr)
            continue
        t0 = time.perf_counter()
        S = min(inst.n, args.starts) if args.starts else None
        order = greedy_solutions([unit_scaled(inst)], params, S)[0]
        cost = solution_cost(order, inst)
        elapsed = time.perf_counter() - t0
        opt = _benchmark_optimum(path, inst)
        if opt is None and args.reference:
            opt = reference_solve(inst, cfg["scheduler.oracle_budget"]).cost
        gap = None if opt is None else (cost - opt) / opt
        rows.append(ResultRow("model", inst.name or path.stem, cost, gap, elapsed, 1, chash))
    out = _out_dir(args, "runs/benchmark")
    md = _write_report(out, rows, chash)
    print(md, end="")
    return EXIT_OK


def _benchmark_optimum(path: Path, inst) -> float | None:
    from .env import solution_cost

    tour = path.with_suffix(".opt.tour")
    if tour.exists() and inst.problem == "tsp":
        return solution_cost(parse_tour_file(tour), inst)
    return KNOWN_OPTIMA.get(inst.name or path.stem, KNOWN_OPTIMA.get(path.stem))


GRAD_COLUMNS = ("iter", "cos_so_fomaml_first", "cos_so_fomaml_last",
                "cos_so_reptile_first", "cos_so_reptile_last")


def _checkpoint_paths(items) -> list[Path]:
    paths = []
    for item in items or []:
        p = Path(item)
        paths += sorted(p.glob("ckpt_*.ckpt")) if p.is_dir() else [p]
    return paths


def cmd_grad_analysis(args) -> int:
    from .meta import (InnerConfig, LinearObjective, PomoObjective, grad_direction_report,
                       layer_slices)

    cfg = _resolve(args)
    points = []
    for path in _checkpoint_paths(args.checkpoints):
        ck = ckpt_io.load(path)
        points.append((ck.state.e, ck.state.params))
    if not points:
        points = [(0, _init_params(cfg))]
    points.sort(key=lambda p: p[0])
    seed = cfg["train.seed"] if args.seed is None else args.seed
    task = TaskSpec.parse(args.task or f"{cfg['model.problem']}:{cfg['scheduler.n_min']}:uniform")
    inner = InnerConfig(K=cfg["inner.K"], alpha=cfg["inner.alpha"], optimizer="sgd",
                        differentiable=True)
    rows = []
    for e, params in points:
        if args.linear_sanity:
            coef = np.random.default_rng([seed, e]).standard_normal(params.values.numel())
            obj = LinearObjective(coef)
        else:
            obj = PomoObjective(task, params, args.M or cfg["train.M"])
        d = grad_direction_report(params.values, obj, inner, np.random.default_rng([seed, e]),
                                  layer_slices(params))
        rows.append({"iter": e,
                     "cos_so_fomaml_first": d.slices["first"]["so_fomaml"],
                     "cos_so_fomaml_last": d.slices["last"]["so_fomaml"],
                     "cos_so_reptile_first": d.slices["first"]["so_reptile"],
                     "cos_so_reptile_last": d.slices["last"]["so_reptile"]})
    out = Path(args.out or "grad_analysis.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=GRAD_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if k == "iter" else repr(float(r[k]))) for k in GRAD_COLUMNS})
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--preset", choices=sorted(C.PRESETS), default="desk_scale")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--workers", type=int, default=1, help="cap on torch worker threads")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    ap = argparse.ArgumentParser(prog="metavrp", description="Meta-trained routing policies.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write synthetic instances")
    p.add_argument("--task", action="append", help="problem:n:dist, e.g. tsp:100:uniform")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--format", choices=("jsonl", "tsplib"), default="jsonl")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="meta-train a policy")
    p.add_argument("--rule", choices=("second_order", "fomaml", "reptile", "switch", "joint"))
    p.add_argument("--K", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", parents=[common], help="few-shot adapt a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--task")
    p.add_argument("--K", type=int)
    p.add_argument("--pool", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", parents=[common], help="zero-/few-shot gap table")
    p.add_argument("--checkpoint")
    p.add_argument("--task")
    p.add_argument("--count", type=int)
    p.add_argument("--instances", help="JSONL instance file instead of generating")
    p.add_argument("--few-shot", type=int, default=0, metavar="K")
    p.add_argument("--pool", type=int)
    p.add_argument("--augment8", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", parents=[common], help="evaluate on TSPLIB/CVRPLIB files")
    p.add_argument("--checkpoint")
    p.add_argument("--dir", required=True)
    p.add_argument("--starts", type=int, help="cap on multi-start count")
    p.add_argument("--reference", action="store_true",
                   help="run local search when no optimum is known")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("grad-analysis", parents=[common], help="gradient-direction cosines")
    p.add_argument("--checkpoints", nargs="*", help="checkpoint files or run directories")
    p.add_argument("--task")
    p.add_argument("--M", type=int)
    p.add_argument("--linear-sanity", action="store_true",
                   help="use a linear loss; every cosine must be 1.0")
    p.set_defaults(func=cmd_grad_analysis)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(max(1, args.workers))
    try:
        return args.func(args)
    except (InvalidArgument, ParseError, UnsupportedFormat) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExternalSolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.output:
            print(exc.output, file=sys.stderr)
        return EXIT_RUNTIME
    except (MetaVRPError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
