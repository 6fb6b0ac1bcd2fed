"""Command-line front end.

    nrdf solve    --config cfg.toml [--out dir]   backward + forward, all artifacts
    nrdf backward --config cfg.toml               offline sweep, checkpoint only
    nrdf forward  --config cfg.toml               online pass against a checkpoint
    nrdf sweep    --config cfg.toml               one solve per sweep price
    nrdf bench    --config cfg.toml               backward timing per worker count
    nrdf oracle   --pred 0.5,0.5 --s -2           single memoryless solve, no config

Exit codes: 0 success, 1 validation error, 2 numerical non-convergence or
table inconsistency, 3 I/O or checkpoint corruption.

Artifacts (fixed headers, deterministic bodies):
    tables.ckpt       versioned, checksummed backward-table checkpoint
    trajectory.json   full trajectory summary
    per_stage.csv     t,rate_nats,rate_bits,distortion,grid_index,belief_*,iterations,final_gap
    convergence.csv   t,branch,iteration,objective,gap
    sweep.csv         s,avg_distortion,avg_rate_nats,avg_rate_bits,status
    bench.csv         workers,wall_seconds,cells,cells_per_sec,checksum
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import backend, config
from .backward import backward_pass, load_tables, save_tables
from .errors import ConsistencyError, NrdfError, TableIOError, ValidationError
from .forward import Trajectory, forward_pass

LN2 = math.log(2.0)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def _f(x: float) -> str:
    return format(float(x), ".12g")


def _write_csv(path: Path, header: list[str], rows, trailer: str | None = None):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (int, str)) else _f(c) for c in row))
    if trailer:
        lines.append(trailer)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _belief_header(x_size: int, y_size: int) -> list[str]:
    return [f"belief_x{i}_y{j}" for j in range(y_size) for i in range(x_size)]


def _per_stage_rows(traj: Trajectory, x_size: int, y_size: int):
    for r in traj.stages:
        belief = np.asarray(r.belief)
        if belief.shape[1] < y_size:  # stage 0 stores the prior once
            belief = np.repeat(belief, y_size, axis=1)
        cells = [belief[i, j] for j in range(y_size) for i in range(x_size)]
        yield [r.t, r.rate, r.rate / LN2, r.distortion, r.grid_index, *cells,
               r.iterations, r.final_gap]


def _write_trajectory_artifacts(out: Path, cfg: config.RunConfig, traj: Trajectory,
                                created: list[Path]):
    x, y = cfg.x_size, cfg.y_size
    per_stage = out / "per_stage.csv"
    _write_csv(
        per_stage,
        ["t", "rate_nats", "rate_bits", "distortion", "grid_index",
         *_belief_header(x, y), "iterations", "final_gap"],
        _per_stage_rows(traj, x, y),
    )
    created.append(per_stage)

    if cfg.trace_every > 0:
        conv = out / "convergence.csv"
        rows = []
        for t, branch, trace in traj.traces:
            if trace is None or t % cfg.trace_every != 0:
                continue
            for k in range(len(trace)):
                rows.append([t, branch, k, trace.objective[k], trace.gap[k]])
        _write_csv(conv, ["t", "branch", "iteration", "objective", "gap"], rows)
        created.append(conv)

    summary = {
        "format_version": 1,
        "backend": backend.active_name(cfg.backend if cfg.backend != "auto" else None),
        "config": config.to_toml(cfg),
        "converged": traj.converged,
        "totals": {
            "rate_sum_nats": traj.total_rate_sum,
            "rate_avg_nats": traj.total_rate_avg,
            "rate_avg_bits": traj.total_rate_avg / LN2,
            "distortion_avg": traj.total_distortion_avg,
        },
        "stages": [
            {
                "t": r.t,
                "rate_nats": r.rate,
                "rate_bits": r.rate / LN2,
                "distortion": r.distortion,
                "grid_index": r.grid_index,
                "belief": np.asarray(r.belief).tolist(),
                "policy": r.policy.table.tolist(),
                "output": r.output.columns.tolist(),
                "marginal": np.asarray(r.marginal).tolist(),
                "iterations": r.iterations,
                "final_gap": r.final_gap,
                "converged": r.converged,
                "stored_rate": None if r.stored_rate is None else r.stored_rate.tolist(),
                "projection_distance": r.projection_distance,
            }
            for r in traj.stages
        ],
    }
    traj_path = out / "trajectory.json"
    traj_path.write_text(json.dumps(summary, sort_keys=True, indent=1), encoding="utf-8")
    created.append(traj_path)


def _print_summary(cfg: config.RunConfig, traj: Trajectory):
    rate = traj.total_rate_avg
    if cfg.log_base == "bits":
        print(f"average rate      {_f(rate / LN2)} bits ({_f(rate)} nats)")
    else:
        print(f"average rate      {_f(rate)} nats ({_f(rate / LN2)} bits)")
    print(f"summed rate       {_f(traj.total_rate_sum)} nats")
    print(f"average distortion {_f(traj.total_distortion_avg)}")
    print(f"converged         {traj.converged}")


def _run_solve(cfg: config.RunConfig, out: Path, created: list[Path]) -> tuple[Trajectory, int]:
    src = cfg.source()
    dist = cfg.distortion()
    grids = cfg.grids()
    sched = cfg.schedule()
    backend_name = None if cfg.backend == "auto" else cfg.backend
    tables = backward_pass(
        src, dist, grids, sched, eps=cfg.epsilon, max_iter=cfg.max_iter,
        workers=cfg.workers, memory_cap_mb=cfg.memory_cap_mb, backend_name=backend_name,
    )
    ckpt = out / "tables.ckpt"
    save_tables(tables, ckpt)
    created.append(ckpt)
    traj = forward_pass(
        tables, src, dist, sched, p0y_override=cfg.p0y,
        record_traces=cfg.trace_every > 0, selection=cfg.selection,
    )
    _write_trajectory_artifacts(out, cfg, traj, created)
    status = EXIT_OK
    if not tables.all_converged or not traj.converged:
        print(
            f"warning: {tables.nonconverged_count} backward cells did not converge",
            file=sys.stderr,
        )
        status = EXIT_NUMERICAL
    return traj, status


def cmd_solve(cfg: config.RunConfig, out: Path) -> int:
    created: list[Path] = []
    try:
        traj, status = _run_solve(cfg, out, created)
    except Exception:
        for p in created:
            p.unlink(missing_ok=True)
        raise
    _print_summary(cfg, traj)
    return status


def cmd_backward(cfg: config.RunConfig, out: Path) -> int:
    tables = backward_pass(
        cfg.source(), cfg.distortion(), cfg.grids(), cfg.schedule(),
        eps=cfg.epsilon, max_iter=cfg.max_iter, workers=cfg.workers,
        memory_cap_mb=cfg.memory_cap_mb,
        backend_name=None if cfg.backend == "auto" else cfg.backend,
    )
    save_tables(tables, out / "tables.ckpt")
    print(f"stages {tables.horizon}  cells {tables.cells_solved}  "
          f"nonconverged {tables.nonconverged_count}  checksum {tables.checksum()[:16]}")
    return EXIT_OK if tables.all_converged else EXIT_NUMERICAL


def cmd_forward(cfg: config.RunConfig, out: Path) -> int:
    tables = load_tables(out / "tables.ckpt")
    traj = forward_pass(
        tables, cfg.source(), cfg.distortion(), cfg.schedule(),
        p0y_override=cfg.p0y, record_traces=cfg.trace_every > 0,
        selection=cfg.selection,
    )
    created: list[Path] = []
    _write_trajectory_artifacts(out, cfg, traj, created)
    _print_summary(cfg, traj)
    return EXIT_OK if traj.converged else EXIT_NUMERICAL


def cmd_sweep(cfg: config.RunConfig, out: Path) -> int:
    rows = []
    worst = EXIT_OK
    for s_val in cfg.sweep_s:
        sub = cfg.with_s(s_val)
        sub_out = out / f"s_{_f(s_val)}"
        sub_out.mkdir(parents=True, exist_ok=True)
        created: list[Path] = []
        try:
            traj, status = _run_solve(sub, sub_out, created)
            rows.append((s_val, traj.total_distortion_avg, traj.total_rate_avg, "ok"))
            worst = max(worst, status)
        except NrdfError as e:
            print(f"sweep point s={s_val} failed: {e}", file=sys.stderr)
            rows.append((s_val, float("nan"), float("nan"), "error"))
            worst = max(worst, EXIT_NUMERICAL)
    rows.sort(key=lambda r: (r[1] if r[1] == r[1] else float("inf"), r[0]))
    finite = [(d, r) for _, d, r, st in rows if st == "ok"]
    # with rows sorted by distortion, rate must be non-increasing
    monotone = all(
        finite[i + 1][1] <= finite[i][1] + 1e-12 for i in range(len(finite) - 1)
    )
    _write_csv(
        out / "sweep.csv",
        ["s", "avg_distortion", "avg_rate_nats", "avg_rate_bits", "status"],
        ([s, d, r, (r / LN2 if r == r else r), st] for s, d, r, st in rows),
        trailer=f"# rate_nonincreasing_in_distortion={'true' if monotone else 'false'}",
    )
    for s, d, r, st in rows:
        print(f"s={_f(s)}  D={_f(d)}  R={_f(r)} nats  [{st}]")
    return worst


def cmd_bench(cfg: config.RunConfig, out: Path) -> int:
    src, dist = cfg.source(), cfg.distortion()
    grids, sched = cfg.grids(), cfg.schedule()
    rows = []
    checksums = set()
    for w in cfg.bench_workers:
        t0 = time.perf_counter()
        tables = backward_pass(
            src, dist, grids, sched, eps=cfg.epsilon, max_iter=cfg.max_iter,
            workers=w, memory_cap_mb=cfg.memory_cap_mb,
            backend_name=None if cfg.backend == "auto" else cfg.backend,
        )
        wall = time.perf_counter() - t0
        digest = tables.checksum()
        checksums.add(digest)
        cells = tables.cells_solved
        rows.append([w, wall, cells, cells / wall if wall > 0 else float("inf"),
                     digest[:16]])
        print(f"workers={w}  wall={wall:.3f}s  cells={cells}  "
              f"cells/s={cells / wall:,.0f}  checksum={digest[:16]}")
    _write_csv(out / "bench.csv",
               ["workers", "wall_seconds", "cells", "cells_per_sec", "checksum"], rows)
    if len(checksums) > 1:
        print("determinism failure: checksums differ across worker counts", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_oracle(pred_text: str, s: float, rho_text: str | None) -> int:
    from .am import run_branch_am

    pred = np.array([float(x) for x in pred_text.split(",")])
    if rho_text:
        rho = np.array([[float(v) for v in row.split(",")] for row in rho_text.split(";")])
    else:
        rho = 1.0 - np.eye(pred.size)
    res = run_branch_am(pred, rho, s)
    print(f"rate       {_f(res.point.rate)} nats ({_f(res.point.rate / LN2)} bits)")
    print(f"distortion {_f(res.point.distortion)}")
    print(f"iterations {res.iterations}  final_gap {res.final_gap:.3e}")
    return EXIT_OK if res.converged else EXIT_NUMERICAL


def _apply_overrides(cfg: config.RunConfig, args) -> config.RunConfig:
    updates = {}
    if args.n is not None:
        updates["horizon"] = args.n
    if args.N is not None:
        updates["grid_levels"] = args.N
    if args.s is not None:
        updates["s"] = args.s
    if args.workers is not None:
        updates["workers"] = args.workers
    if getattr(args, "backend", None):
        updates["backend"] = args.backend
    if updates:
        cfg = replace(cfg, **updates).validate()
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nrdf", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--out", default=None, help="output directory (default from config)")
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--n", type=int, default=None, help="override horizon")
        sp.add_argument("--N", type=int, default=None, help="override grid levels")
        sp.add_argument("--s", type=float, default=None, help="override price")
        sp.add_argument("--backend", choices=["auto", "compiled", "pure"], default=None)

    for name in ("solve", "backward", "forward", "sweep", "bench"):
        add_common(sub.add_parser(name))

    o = sub.add_parser("oracle", help="memoryless single-stage solve")
    o.add_argument("--pred", required=True, help="comma-separated source distribution")
    o.add_argument("--s", type=float, required=True)
    o.add_argument("--rho", default=None,
                   help="distortion rows as 'a,b;c,d' (default: 0/1 mismatch)")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "oracle":
            return cmd_oracle(args.pred, args.s, args.rho)
        cfg = _apply_overrides(config.load(args.config), args)
        out = Path(args.out if args.out is not None else cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        handler = {
            "solve": cmd_solve,
            "backward": cmd_backward,
            "forward": cmd_forward,
            "sweep": cmd_sweep,
            "bench": cmd_bench,
        }[args.command]
        return handler(cfg, out)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConsistencyError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TableIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
