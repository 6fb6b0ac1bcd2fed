"""Online forward computation along the best belief trajectory.

Stage 0 is solved directly from the source prior (its look-ahead is the
per-output minimum of the stage-1 value closure); the resulting posterior,
projected onto the stage-1 grid, seeds the trajectory.  For t = 1..n-1 the
stage policy and output kernel are recovered by re-running the
(deterministic, cheap) per-branch solves for the chosen cell, the next
belief is selected, and the output marginal advances through the recovered
kernel.  Stage n uses the zero look-ahead cell.

Two next-belief selection rules are available:

* ``bayes`` (default): take the policy of the cell whose look-ahead index
  minimizes the marginal-weighted stored value, push the current belief
  through it with Bayes' rule, and project back onto the next grid.  The
  realized trajectory is then consistent with the belief dynamics and, for
  symmetric time-invariant models, settles on the symmetric stationary
  pattern.
* ``value_argmin``: use the minimizing look-ahead index itself.  This
  selects whichever next belief promises the cheapest continuation,
  with no consistency force tying it to the dynamics; on symmetric models
  it drifts to low-entropy corner beliefs.  Kept as an explicit mode
  because it is the natural reading of the raw cell-value tables.

Reported per-stage rates exclude the look-ahead: they are the plain
conditional mutual information of each stage.  The stored backward values
include it; every visited cell's re-run value is checked against the table
within 10*eps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .am import AmResult, run_branch_am
from .backward import BackwardTables, model_fingerprint
from .errors import ConsistencyError, ShapeError, ValidationError
from .grid import project
from .model import (
    Belief,
    DistortionModel,
    LagrangeSchedule,
    MarkovSource,
    OutputKernel,
    Policy,
    PredictiveBelief,
    bayes_belief_update,
    output_marginal_step,
    prob_vector,
    stage_distortion,
    stage_objective,
)


@dataclass(frozen=True)
class StageRecord:
    """Everything the trajectory knows about one stage."""

    t: int
    grid_index: int  # -1 at stage 0 (no belief grid there)
    belief: np.ndarray  # (x, y_prev); stage 0 stores the prior as one column
    policy: Policy
    output: OutputKernel
    marginal: np.ndarray  # P(y_t) after this stage
    rate: float  # nats, look-ahead excluded
    distortion: float
    iterations: int
    final_gap: float
    converged: bool
    stored_rate: np.ndarray | None  # table row this stage was checked against
    projection_distance: float  # L1 gap between Bayes update and chosen grid point


@dataclass(frozen=True)
class Trajectory:
    stages: tuple[StageRecord, ...]
    total_rate_sum: float
    total_rate_avg: float
    total_distortion_avg: float
    converged: bool
    traces: tuple = ()  # optional per-stage (t, branch, AmTrace) triples

    @property
    def horizon(self) -> int:
        return len(self.stages) - 1

    def rates(self) -> np.ndarray:
        return np.array([r.rate for r in self.stages])

    def distortions(self) -> np.ndarray:
        return np.array([r.distortion for r in self.stages])


def best_next_belief(t: int, current_index: int, tables: BackwardTables, marginal) -> int:
    """Grid index minimizing the marginal-weighted stored value
    sum_y_prev rate[t][current][b'][y_prev] * P(y_prev); lowest index wins ties."""
    st = tables.stage(t)
    m = prob_vector(marginal)
    if m.size != st.rate.shape[2]:
        raise ShapeError(
            f"marginal has {m.size} entries, stage {t} has {st.rate.shape[2]} branches"
        )
    scores = st.rate[current_index] @ m
    return int(np.argmin(scores))


def _solve_branches(pred: PredictiveBelief, rho, s_t, lam, eps, max_iter) -> list[AmResult]:
    return [
        run_branch_am(pred.column(yb), rho, s_t, lam, eps=eps, max_iter=max_iter)
        for yb in range(pred.columns.shape[1])
    ]


def _assemble(results: list[AmResult]) -> tuple[Policy, OutputKernel]:
    policy = Policy(np.stack([r.policy_branch for r in results]))
    output = OutputKernel(np.column_stack([r.output_branch for r in results]))
    return policy, output


def init_stage0(
    initial,
    rho0: np.ndarray,
    s0: float,
    lookahead,
    eps: float,
    max_iter: int,
    p0y_override=None,
    record_trace: bool = False,
) -> tuple[AmResult, np.ndarray, Belief]:
    """Solve stage 0 and return (branch result, output marginal, posterior).

    The posterior P(x_0 | y_0) follows from the converged stage-0 policy by
    Bayes' rule.  When ``p0y_override`` is given, the output distribution is
    pinned and only the implied policy update runs (single sweep, no
    optimization of the marginal; the result counts as converged because
    there is nothing left to converge).
    """
    p0 = prob_vector(initial)
    if p0y_override is None:
        res = run_branch_am(
            p0, rho0, s0, lookahead, eps=eps, max_iter=max_iter, record_trace=record_trace
        )
    else:
        q = prob_vector(p0y_override)
        if np.any(q <= 0):
            raise ValidationError("stage-0 output override must be strictly positive")
        res = run_branch_am(
            p0, rho0, s0, lookahead, eps=eps, max_iter=1, init_output=q,
            record_trace=record_trace,
        )
        res = AmResult(
            policy_branch=res.policy_branch,
            output_branch=res.output_branch,
            point=res.point,
            iterations=res.iterations,
            final_gap=res.final_gap,
            converged=True,
            trace=res.trace,
        )
    phi = res.policy_branch  # (x0, y0)
    q = res.output_branch
    post = phi * p0[:, None]  # joint P(x0, y0)
    sums = post.sum(axis=0)
    cols = np.where(sums > 0, post / np.where(sums > 0, sums, 1.0), 1.0 / p0.size)
    posterior = Belief(cols)
    return res, q, posterior


def forward_pass(
    tables: BackwardTables,
    source: MarkovSource,
    distortion: DistortionModel,
    s: LagrangeSchedule,
    p0y_override=None,
    record_traces: bool = False,
    selection: str = "bayes",
) -> Trajectory:
    """Run the online computation against ``tables`` and assemble per-stage
    rate/distortion plus the summed and averaged totals.

    ``selection`` picks the next-belief rule (see the module docstring).
    Raises ConsistencyError when a re-run cell value drifts more than
    10*eps from its stored table entry, and ValidationError when the tables
    were built for a different model.
    """
    if selection not in ("bayes", "value_argmin"):
        raise ValidationError(f"unknown selection rule {selection!r}")
    n = source.horizon
    eps, max_iter = tables.eps, tables.max_iter
    if tables.horizon != n:
        raise ValidationError(
            f"tables cover {tables.horizon} stages, source horizon is {n}"
        )
    if n > 0:
        expected = model_fingerprint(source, distortion, tables.grids, s, eps, max_iter)
        if expected != tables.fingerprint:
            raise ValidationError(
                "tables were built for a different model/configuration; refusing"
            )
    if distortion.horizon != n or s.horizon != n:
        raise ShapeError("source, distortion, and price schedule horizons differ")

    records: list[StageRecord] = []
    traces: list[tuple] = []

    # stage 0
    rho0 = distortion.rho(0)
    ny0 = rho0.shape[1]
    lam0 = (
        tables.stage(1).value.min(axis=1) if n >= 1 else np.zeros(ny0)
    )
    res0, marginal, posterior = init_stage0(
        source.initial, rho0, s[0], lam0, eps, max_iter, p0y_override,
        record_trace=record_traces,
    )
    if record_traces:
        traces.append((0, 0, res0.trace))
    pred0 = PredictiveBelief(np.asarray(source.initial)[:, None])
    policy0 = Policy(res0.policy_branch[None, :, :])
    output0 = OutputKernel(res0.output_branch[:, None])
    r0 = max(stage_objective(pred0, policy0, output0, None, 0), 0.0)
    d0 = stage_distortion(pred0, policy0, rho0, 0)
    records.append(
        StageRecord(
            t=0,
            grid_index=-1,
            belief=np.asarray(source.initial)[:, None],
            policy=policy0,
            output=output0,
            marginal=marginal,
            rate=r0,
            distortion=d0,
            iterations=res0.iterations,
            final_gap=res0.final_gap,
            converged=res0.converged,
            stored_rate=None,
            projection_distance=0.0,
        )
    )

    if n == 0:
        return _finish(records, traces)

    b_cur = project(posterior, tables.grids[0])
    proj_dist = float(
        np.abs(tables.grids[0].point(b_cur).columns - posterior.columns).sum()
    )

    for t in range(1, n + 1):
        grid_t = tables.grids[t - 1]
        belief = grid_t.point(b_cur)
        pred = PredictiveBelief(source.kernel(t) @ belief.columns)
        rho_t = distortion.rho(t)
        st = tables.stage(t)

        if t < n:
            b_next = best_next_belief(t, b_cur, tables, marginal)
            if selection == "bayes":
                lam = tables.lookahead_column(t, b_next)
                tentative, _ = _assemble(
                    _solve_branches(pred, rho_t, s[t], lam, eps, max_iter)
                )
                updated, _ = bayes_belief_update(belief, tentative, source.kernel(t))
                b_next = project(updated, tables.grids[t])
            lam = tables.lookahead_column(t, b_next)
        else:
            b_next = 0
            lam = np.zeros(rho_t.shape[1])

        results = _solve_branches(pred, rho_t, s[t], lam, eps, max_iter)
        stored = st.rate[b_cur, b_next, :]
        for yb, r in enumerate(results):
            drift = abs(r.point.rate - stored[yb])
            if drift > 10 * eps:
                raise ConsistencyError(
                    f"stage {t} branch {yb}: re-run value {r.point.rate!r} differs "
                    f"from stored {stored[yb]!r} by {drift:.3e} (> 10*eps)"
                )
        policy, output = _assemble(results)

        rate_t = max(
            sum(
                float(marginal[yb]) * stage_objective(pred, policy, output, None, yb)
                for yb in range(marginal.size)
            ),
            0.0,
        )
        dist_t = sum(
            float(marginal[yb]) * stage_distortion(pred, policy, rho_t, yb)
            for yb in range(marginal.size)
        )

        if record_traces:
            for yb in range(marginal.size):
                traced = run_branch_am(
                    pred.column(yb), rho_t, s[t], lam,
                    eps=eps, max_iter=max_iter, record_trace=True,
                )
                traces.append((t, yb, traced.trace))

        new_marginal = output_marginal_step(marginal, output)

        next_proj = 0.0
        if t < n:
            updated, _ = bayes_belief_update(belief, policy, source.kernel(t))
            chosen = tables.grids[t].point(b_next)
            next_proj = float(np.abs(chosen.columns - updated.columns).sum())

        records.append(
            StageRecord(
                t=t,
                grid_index=b_cur,
                belief=belief.columns,
                policy=policy,
                output=output,
                marginal=new_marginal,
                rate=rate_t,
                distortion=dist_t,
                iterations=sum(r.iterations for r in results),
                final_gap=max(r.final_gap for r in results),
                converged=all(r.converged for r in results),
                stored_rate=stored.copy(),
                projection_distance=proj_dist,
            )
        )
        marginal = new_marginal
        b_cur = b_next
        proj_dist = next_proj

    return _finish(records, traces)


def _finish(records: list[StageRecord], traces) -> Trajectory:
    n1 = len(records)
    total = float(sum(r.rate for r in records))
    return Trajectory(
        stages=tuple(records),
        total_rate_sum=total,
        total_rate_avg=total / n1,
        total_distortion_avg=float(sum(r.distortion for r in records)) / n1,
        converged=all(r.converged for r in records),
        traces=tuple(traces),
    )
