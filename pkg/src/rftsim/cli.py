"""Command-line driver for the whole pipeline.

Every command writes its results under ``--out`` and echoes a summary to
stdout; each file and each summary starts with the provenance header.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import __version__
from .chunk_exec import (ABSOLUTE, DELTA, ExecConfig, RecedingHorizon, RecedingTemporal, TemporalEnsemble)
from .datastore import EpisodeStore, PerTaskCap, SkillWeight
from .demos import generate_demos, successes
from .drift import load_scenario
from .engine import RolloutJob, plan_grid, run
from .flywheel import (CheckpointRegistry, RftConfig, instance_table, read_validation, run_rft, select_best,
                       theoretical_best, validation_csv)
from .metrics import aggregate_qscore, manifest_stats, success_rate
from .policy import PolicySnapshot, knn_train, load_snapshot, noisy_expert, scripted_expert
from .provenance import header
from .rng import derive_seed
from .sim import load_suite

log = logging.getLogger("rftsim")

DEMO_REF = "demos"
DEMO_SUCCESS_REF = "demos-success"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# argument helpers -------------------------------------------------------------

def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {len(vals)}")
    return vals


def _delta(text: str) -> tuple[float, float, float]:
    vals = _floats(text, 3)
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("half-widths must be >= 0")
    return vals


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _words(text: str) -> tuple[str, ...]:
    return tuple(w.strip() for w in text.split(",") if w.strip())


def _mode(name: str, horizon: int, decay: float, execute: int | None):
    if name == "temporal_ensemble":
        return TemporalEnsemble(decay)
    if name == "receding_temporal":
        return RecedingTemporal(execute if execute is not None and execute < horizon else None)
    if name == "receding_horizon":
        return RecedingHorizon()
    raise UsageError(f"unknown control mode {name!r}")


def exec_config(args) -> ExecConfig:
    return ExecConfig(args.horizon, _mode(args.mode, args.horizon, args.decay, args.execute), args.representation,
                      args.hold_factor, not args.no_state_input)


def _config(args, **extra) -> dict:
    skip = {"func", "seed", "out", "workers", "verbose"}  # do not change results
    d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k not in skip}
    d.update(extra)
    return d


def _csv(header_row: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header_row)
    w.writerows(rows)
    return buf.getvalue()


def _emit(args, name: str, command: str, body: str, config: dict, notes=(), summary: str | None = None) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    head = header(command, args.seed, config, tuple(notes))
    path = out / name
    path.write_text(head + body)
    sys.stdout.write(head + (summary if summary is not None else body))
    return path


def _tasks(args, ids: Sequence[int] | None = None) -> dict:
    if args.suite is not None and not Path(args.suite).is_dir():
        raise UsageError(f"suite directory {args.suite!r} does not exist")
    tasks = {t.task_id: t for t in load_suite(args.suite)}
    if not tasks:
        raise UsageError(f"no task files in {args.suite!r}")
    if ids:
        missing = [i for i in ids if i not in tasks]
        if missing:
            raise UsageError(f"unknown task ids {missing}")
        tasks = {i: tasks[i] for i in ids}
    return tasks


def _manifest(store: EpisodeStore, name: str):
    try:
        mid = store.ref(name)
    except (FileNotFoundError, KeyError):
        mid = name
    try:
        return store.load_manifest(mid)
    except FileNotFoundError:
        raise UsageError(f"no manifest or ref named {name!r} in {store.root}")


def _policy(args, store: EpisodeStore, hold: int) -> PolicySnapshot:
    if args.policy == "scripted":
        return scripted_expert()
    if args.policy.startswith("noisy:"):
        return noisy_expert(float(args.policy.split(":", 1)[1]))
    if args.policy == "knn":
        return knn_train(_manifest(store, args.manifest), store, args.k, args.chunk_stride, hold)
    path = Path(args.policy)
    if not path.exists():
        raise UsageError(f"policy must be scripted, noisy:<sigma>, knn or a snapshot file; got {args.policy!r}")
    return load_snapshot(path)


def _summary(table) -> str:
    return (f"qscore: {float(aggregate_qscore(table)):.6f}\n"
            f"success_rate: {float(success_rate(table)):.6f}\n")


# commands ---------------------------------------------------------------------

def cmd_gen_demos(args) -> None:
    store = EpisodeStore(args.store)
    tasks = _tasks(args, args.tasks)
    m = generate_demos(tasks.values(), store, sigma=args.sigma, seed=args.seed, per_task=args.per_task,
                       until_success=args.until_success)
    store.save_manifest(m)
    store.set_ref(DEMO_REF, m.manifest_id)
    ok = successes(m)
    store.save_manifest(ok)
    store.set_ref(DEMO_SUCCESS_REF, ok.manifest_id)
    body = (f"manifest-id: {m.manifest_id}\nentries: {len(m.entries)}\n"
            f"success-manifest-id: {ok.manifest_id}\nsuccesses: {len(ok.entries)}\n")
    _emit(args, "gen-demos.txt", "gen-demos", body, _config(args))


def _stats_tables(manifest, store):
    st = manifest_stats(manifest, store)
    skills = _csv(("skill", "share"), [(s, f"{v:.6f}") for s, v in sorted(st.skill_shares.items())])
    tasks = _csv(("task", "episodes", "mean_frames", "mean_unique_skills", "simple"),
                 [(t, s.episodes, f"{s.mean_frames:.3f}", f"{s.mean_unique_skills:.3f}", int(s.simple))
                  for t, s in sorted(st.per_task.items())])
    return skills, tasks


def cmd_stats(args) -> None:
    store = EpisodeStore(args.store)
    m = _manifest(store, args.manifest)
    skills, tasks = _stats_tables(m, store)
    cfg = _config(args, manifest_id=m.manifest_id)
    _emit(args, "skills.csv", "stats", skills, cfg)
    _emit(args, "tasks.csv", "stats", tasks, cfg)


def cmd_eval(args) -> None:
    store = EpisodeStore(args.store)
    tasks = _tasks(args, args.tasks)
    cfg = exec_config(args)
    pol = _policy(args, store, cfg.hold_factor)
    jobs = plan_grid(list(tasks.values()), args.trials, pol.checkpoint_id, cfg, args.delta, args.seed,
                     instances=args.instances)
    results = run(jobs, args.workers, tasks, policies={pol.checkpoint_id: pol}, keep_episodes=False)
    text = validation_csv(jobs, results)
    table = instance_table(read_validation(text))
    note = (f"checkpoint: {pol.checkpoint_id}",)
    _emit(args, "eval.csv", "eval", text, _config(args, exec=cfg.to_dict()), note, _summary(table))


ABLATION_COLUMNS = ("mode", "H", "representation", "hold_factor", "state_input", "task", "success_rate",
                    "mean_qscore", "mean_steps")


def ablation_jobs(tasks: dict, grid: Sequence[ExecConfig], episodes: int, checkpoint_of, delta, seed: int,
                  drift=None) -> list[tuple[ExecConfig, RolloutJob]]:
    """One job per (config, task, episode); episode e uses instance e mod n and the same seeds in every cell."""
    out = []
    for cfg in grid:
        for task in tasks.values():
            n = len(task.instances)
            for e in range(episodes):
                inst = task.instances[e % n]
                dist = (drift.sample(task, inst, derive_seed(seed, "drift", e)),) if drift is not None else ()
                out.append((cfg, RolloutJob(
                    round=-1, index=e, task_id=task.task_id, instance_seed=inst,
                    episode_seed=derive_seed(seed, "ablate-episode", task.task_id, e),
                    perturbation_seed=derive_seed(seed, "ablate-perturb", task.task_id, e),
                    delta=tuple(delta), checkpoint_id=checkpoint_of(cfg), exec_config=cfg, source="ablation",
                    disturbances=dist)))
    return out


def ablation_table(pairs, results) -> list[tuple]:
    by_id = {r.job_id: r for r in results}
    cells: dict = {}
    for cfg, job in pairs:
        key = (cfg.mode.name, cfg.horizon, cfg.representation, cfg.hold_factor, int(cfg.state_input), job.task_id)
        cells.setdefault(key, []).append(by_id[job.job_id])
    rows = []
    for key, rs in cells.items():
        n = len(rs)
        rows.append(key + (f"{sum(r.outcome == 'success' for r in rs) / n:.6f}",
                           f"{sum(r.qscore for r in rs) / n:.6f}", f"{sum(r.steps for r in rs) / n:.3f}"))
    return sorted(rows, key=lambda r: r[:6])


def cmd_ablate(args) -> None:
    if args.scenario:
        task, drift = load_scenario(args.scenario)
        tasks = {task.task_id: task}
    else:
        tasks, drift = _tasks(args, args.tasks), None
    policy_kind = args.policy or ("scripted" if args.scenario else "knn")
    grid = []
    for mode in args.modes:
        for H in args.horizons:
            for rep in args.representations:
                for hold in args.hold_factors:
                    for si in args.state_inputs:
                        if si not in ("on", "off"):
                            raise UsageError(f"state input must be on or off, got {si!r}")
                        if H == 0 and not args.scenario:
                            raise UsageError("horizon 0 (single open-loop plan) needs --scenario")
                        H_eff = task.max_steps if H == 0 else H
                        grid.append(ExecConfig(H_eff, _mode(mode, H_eff, args.decay, None), rep, hold, si == "on"))
    store = EpisodeStore(args.store) if policy_kind == "knn" else None
    policies: dict = {}
    by_hold: dict = {}
    for cfg in grid:
        if cfg.hold_factor not in by_hold:
            args.policy = policy_kind
            by_hold[cfg.hold_factor] = _policy(args, store, cfg.hold_factor)
        p = by_hold[cfg.hold_factor]
        policies[p.checkpoint_id] = p
    pairs = ablation_jobs(tasks, grid, args.episodes, lambda c: by_hold[c.hold_factor].checkpoint_id, args.delta,
                          args.seed, drift)
    results = run([j for _, j in pairs], args.workers, tasks, policies=policies, keep_episodes=False)
    body = _csv(ABLATION_COLUMNS, ablation_table(pairs, results))
    notes = (f"scenario: {args.scenario}",) if args.scenario else ()
    _emit(args, "ablation.csv", "ablate", body, _config(args, policy=policy_kind), notes)


def _balance(text: str):
    if text == "none":
        return None
    if text == "median":
        return PerTaskCap(0.5)
    if text.startswith("cap:"):
        return PerTaskCap(float(text[4:]))
    if text.startswith("skill:"):
        a, b = _floats(text[6:], 2)
        return SkillWeight(a, b)
    raise UsageError(f"balance must be none, median, cap:<q> or skill:<m>,<n>; got {text!r}")


def cmd_rft(args) -> None:
    store = EpisodeStore(args.store)
    tasks = _tasks(args, args.tasks)
    cfg = exec_config(args)
    D = _manifest(store, args.manifest)
    if args.tasks:
        D = D.with_entries(e for e in D.entries if e.task_id in tasks)
    if not D.entries:
        raise UsageError("the initial manifest has no episodes of the selected tasks")
    pi = knn_train(D, store, args.k, args.chunk_stride, cfg.hold_factor)
    rc = RftConfig(args.rounds, args.T, args.delta, cfg, _balance(args.balance), args.k, args.chunk_stride,
                   args.trials, args.instances, args.seed, args.workers)
    out = Path(args.out)
    run_rft(rc, store, D, pi, tasks, out / "rft")
    sys.stdout.write((out / "rft" / "rounds.csv").read_text())


def _checkpoint_tables(args) -> tuple[dict, CheckpointRegistry | None]:
    """(checkpoint -> per-instance table) from an rft directory or from eval CSVs."""
    if args.run:
        root = Path(args.run)
        reg = CheckpointRegistry.from_text((root / "registry.csv").read_text())
        tables = {}
        for e in reg.entries:
            name = e.validation_ref.split("@", 1)[0]
            tables[e.checkpoint_id] = instance_table(read_validation((root / name).read_text()))
        return tables, reg
    if not args.validation:
        raise UsageError("give --run DIR or at least one --validation CSV")
    return {Path(p).stem: instance_table(read_validation(Path(p).read_text())) for p in args.validation}, None


def _winner_rows(winners: dict, rounds: dict) -> list[tuple]:
    return [(t, i, ck, rounds.get(ck, ""), f"{float(v):.6f}") for (t, i), (ck, v) in sorted(winners.items())]


def cmd_best_of(args) -> None:
    tables, reg = _checkpoint_tables(args)
    union, winners = theoretical_best(tables)
    rounds = {e.checkpoint_id: e.round for e in reg.entries} if reg else {}
    if reg:
        best = select_best(reg, {ck: aggregate_qscore(t) for ck, t in tables.items()})
    else:
        scores = {ck: aggregate_qscore(t) for ck, t in tables.items()}
        best = max(scores, key=lambda ck: (scores[ck], -list(scores).index(ck)))
    body = _csv(("task", "instance", "checkpoint", "round", "qscore"), _winner_rows(winners, rounds))
    summary = (f"best-checkpoint: {best}\nbest-qscore: {float(aggregate_qscore(tables[best])):.6f}\n"
               f"union-qscore: {float(union):.6f}\n")
    _emit(args, "best-of.csv", "best-of", body, _config(args), (f"union-qscore: {float(union):.6f}",), summary)


def cmd_subset_train(args) -> None:
    store = EpisodeStore(args.store)
    tasks = _tasks(args)
    ids = sorted(tasks)
    D = _manifest(store, args.manifest)
    cfg = exec_config(args)
    rows = []
    for n in args.sizes:
        if not 1 <= n <= len(ids):
            raise UsageError(f"subset size {n} outside 1..{len(ids)}")
        keep = set(ids[:n])
        sub = store.manifest(e.content_hash for e in D.entries if e.task_id in keep)
        pol = knn_train(sub, store, args.k, args.chunk_stride, cfg.hold_factor)
        jobs = plan_grid([tasks[i] for i in ids], args.trials, pol.checkpoint_id, cfg, args.delta, args.seed,
                         instances=args.instances)
        results = run(jobs, args.workers, tasks, policies={pol.checkpoint_id: pol}, keep_episodes=False)
        table = instance_table(read_validation(validation_csv(jobs, results)))
        rows.append((n, len(sub.entries), pol.checkpoint_id, f"{float(success_rate(table)):.6f}",
                     f"{float(aggregate_qscore(table)):.6f}"))
    body = _csv(("subset_size", "episodes", "checkpoint", "success_rate", "mean_qscore"), rows)
    _emit(args, "subset-train.csv", "subset-train", body, _config(args, exec=cfg.to_dict()))


def cmd_report(args) -> None:
    root = Path(args.run)
    reg = CheckpointRegistry.from_text((root / "registry.csv").read_text())
    tables, _ = _checkpoint_tables(args)
    store = EpisodeStore(args.store)
    final = store.load_manifest(reg.entries[-1].manifest_id)
    skills, task_stats = _stats_tables(final, store)
    cfg = _config(args, manifest_id=final.manifest_id)
    union, winners = theoretical_best(tables)
    q_rows = [(e.round, e.checkpoint_id, f"{float(aggregate_qscore(tables[e.checkpoint_id])):.6f}",
               f"{float(success_rate(tables[e.checkpoint_id])):.6f}") for e in reg.entries]
    rounds = {e.checkpoint_id: e.round for e in reg.entries}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report-skills.csv": skills,
        "report-tasks.csv": task_stats,
        "report-qscores.csv": _csv(("round", "checkpoint", "qscore", "success_rate"), q_rows),
        "report-union.csv": _csv(("task", "instance", "checkpoint", "round", "qscore"),
                                 _winner_rows(winners, rounds)),
    }
    head = header("report", args.seed, cfg, (f"union-qscore: {float(union):.6f}",))
    for name, body in files.items():
        (out / name).write_text(head + body)
    sys.stdout.write(head + "".join(f"wrote: {out / n}\n" for n in files)
                     + f"union-qscore: {float(union):.6f}\n")


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="rftsim", description="Toy household simulator and rejection-sampling fine-tuning pipeline.")
    p.add_argument("--version", action="version", version=f"rftsim {__version__}")
    p.add_argument("--seed", type=int, default=0, help="master seed, recorded in every output header")
    p.add_argument("--workers", type=int, default=1, help="rollout worker processes")
    p.add_argument("--suite", default=None, help="task-suite directory (default: the packaged 12-task suite)")
    p.add_argument("--store", default="store", help="episode store directory")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    execp = Parser(add_help=False)
    g = execp.add_argument_group("execution")
    g.add_argument("--horizon", type=int, default=32, help="action-chunk horizon H")
    g.add_argument("--mode", default="receding_horizon",
                   choices=("receding_horizon", "receding_temporal", "temporal_ensemble"))
    g.add_argument("--decay", type=float, default=0.1, help="temporal-ensemble decay m")
    g.add_argument("--execute", type=int, default=None, help="receding-temporal execute count k (default H/2)")
    g.add_argument("--representation", default=ABSOLUTE, choices=(ABSOLUTE, DELTA))
    g.add_argument("--hold-factor", type=int, default=1, help="ticks each action is held (2 = 15 Hz)")
    g.add_argument("--no-state-input", action="store_true", help="zero the proprioceptive observation")

    polp = Parser(add_help=False)
    g = polp.add_argument_group("policy")
    g.add_argument("--policy", default="knn", help="knn, scripted, noisy:<sigma> or a snapshot file")
    g.add_argument("--manifest", default=DEMO_SUCCESS_REF, help="training manifest id or ref for knn")
    g.add_argument("--k", type=int, default=1, help="nearest neighbours averaged")
    g.add_argument("--chunk-stride", type=int, default=1)

    gridp = Parser(add_help=False)
    g = gridp.add_argument_group("evaluation grid")
    g.add_argument("--trials", type=int, default=5, help="perturbed trials per instance")
    g.add_argument("--instances", type=int, default=None, help="use only the first n instances of each task")
    g.add_argument("--delta", type=_delta, default=(0.2, 0.2, 0.3), help="start-pose half-widths x,y,yaw")

    s = sub.add_parser("gen-demos", help="record expert demonstrations into the store")
    s.add_argument("--per-task", type=int, default=50)
    s.add_argument("--sigma", type=float, default=0.25, help="expert action noise half-width (0 = scripted)")
    s.add_argument("--until-success", type=int, default=None,
                   help="instead of --per-task, retry each instance until its first success (at most N tries)")
    s.add_argument("--tasks", type=_ints, default=None, help="comma-separated task ids (default: all)")
    s.set_defaults(func=cmd_gen_demos)

    s = sub.add_parser("stats", help="skill shares and per-task length statistics of a manifest")
    s.add_argument("--manifest", default=DEMO_REF)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("eval", help="score a policy on the (task, instance, trial) grid", parents=[execp, polp, gridp])
    s.add_argument("--tasks", type=_ints, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="control-mode / horizon / representation sweep")
    s.add_argument("--policy", default=None,
                   help="knn, scripted, noisy:<sigma> or a snapshot file (default: scripted with --scenario, else knn)")
    s.add_argument("--manifest", default=DEMO_SUCCESS_REF, help="training manifest id or ref for knn")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--chunk-stride", type=int, default=1)
    s.add_argument("--modes", type=_words, default=("receding_horizon", "receding_temporal", "temporal_ensemble"))
    s.add_argument("--horizons", type=_ints, default=(8, 16, 32, 50),
                   help="horizons; 0 means a single plan covering the whole episode (scenario only)")
    s.add_argument("--representations", type=_words, default=(ABSOLUTE,))
    s.add_argument("--hold-factors", type=_ints, default=(1,))
    s.add_argument("--state-inputs", type=_words, default=("on",), help="on, off or on,off")
    s.add_argument("--decay", type=float, default=0.1)
    s.add_argument("--episodes", type=int, default=10, help="episodes per task and grid cell")
    s.add_argument("--delta", type=_delta, default=(0.0, 0.0, 0.0))
    s.add_argument("--tasks", type=_ints, default=None)
    s.add_argument("--scenario", default=None, help="run a packaged disturbance scenario instead of the suite")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("rft", help="rejection-sampling fine-tuning rounds", parents=[execp, gridp])
    s.add_argument("--rounds", type=int, default=3)
    s.add_argument("--T", type=int, default=400, help="rollouts per round")
    s.add_argument("--manifest", default=DEMO_SUCCESS_REF, help="initial dataset D")
    s.add_argument("--balance", default="median", help="none, median, cap:<quantile> or skill:<manip>,<nav>")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--chunk-stride", type=int, default=1)
    s.add_argument("--tasks", type=_ints, default=None)
    s.set_defaults(func=cmd_rft)

    s = sub.add_parser("best-of", help="best checkpoint on validation and the per-instance union")
    s.add_argument("--run", default=None, help="rft output directory (the one holding registry.csv)")
    s.add_argument("--validation", action="append", default=None, help="eval CSV; repeat for several checkpoints")
    s.set_defaults(func=cmd_best_of)

    s = sub.add_parser("subset-train", help="train on the first n tasks, evaluate on all",
                       parents=[execp, polp, gridp])
    s.add_argument("--sizes", type=_ints, default=(1, 4, 8, 12))
    s.set_defaults(func=cmd_subset_train)

    s = sub.add_parser("report", help="statistics, per-checkpoint scores and union table of an rft run")
    s.add_argument("--run", required=True, help="rft output directory")
    s.set_defaults(func=cmd_report, validation=None)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"rftsim: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"rftsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
