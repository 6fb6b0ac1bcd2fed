"""Pure-numpy fallback for the alternating-minimization inner loops.

Mirrors the compiled extension ``nrdf._amcore`` call for call: same
arguments, same iteration logic, same return conventions.  Used when the
extension is not built or when NRDF_BACKEND=pure is set.
"""

from __future__ import annotations

import numpy as np

NAME = "pure"


def _branch(p, A, rho, corr, s, eps, max_iter, q, record):
    """Run one branch to the stopping gap; returns (rate, dist, iters, gap, q, trace)."""
    tr_obj, tr_tu, tr_tl, tr_dist = [], [], [], []
    it = 0
    gap = np.inf
    while True:
        den = A @ q
        logden = np.log(den)
        vb = -float(p @ logden) - corr
        c = (p / den) @ A
        pos = c > 0.0
        logc = np.zeros_like(c)
        logc[pos] = np.log(c[pos])
        tu = float(np.sum(q[pos] * c[pos] * logc[pos]))
        tl = float(np.max(logc[pos]))
        gap = max(tl - tu, 0.0)
        if record:
            dk = float((p / den) @ ((q[None, :] * A * rho).sum(axis=1)))
            tr_obj.append(vb)
            tr_tu.append(tu)
            tr_tl.append(tl)
            tr_dist.append(dk)
        it += 1
        if gap <= eps or it >= max_iter:
            break
        q = q * c
        q = q / q.sum()
    den = A @ q
    w = p / den
    dist = float(w @ ((q[None, :] * A * rho).sum(axis=1)))
    rate = s * dist - float(p @ np.log(den)) - corr
    trace = None
    if record:
        trace = (
            np.array(tr_obj),
            np.array(tr_tu),
            np.array(tr_tl),
            np.array(tr_dist),
        )
    return rate, dist, it, gap, q, trace


def solve_cell(p, A, rho, corr, s, eps, max_iter, q0, record_trace=False):
    """Solve one (branch, next-belief) cell.

    Returns (rate, dist, iters, gap, q, phi, trace); ``rate`` includes the
    look-ahead folded into A, ``phi`` is the policy implied by the final
    output distribution.
    """
    p = np.asarray(p, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    q = np.array(q0, dtype=np.float64)
    rate, dist, iters, gap, q, trace = _branch(
        p, A, rho, corr, s, eps, int(max_iter), q, record_trace
    )
    den = A @ q
    phi = (q[None, :] * A) / den[:, None]
    return rate, dist, iters, gap, q, phi, trace


def solve_block(preds, A_stack, mshift, rho, s, eps, max_iter, out_rate, out_dist, out_iters, out_gap):
    """Solve all (next-belief, branch) cells for one current grid point.

    ``preds`` is (n_branches, nx); ``A_stack`` and ``mshift`` hold the
    exponent weights and their per-x log shifts for each next grid point.
    Results land in the preallocated (n_next, n_branches) out arrays.
    """
    n_next = A_stack.shape[0]
    n_branches = preds.shape[0]
    ny = A_stack.shape[2]
    q0 = np.full(ny, 1.0 / ny)
    for j in range(n_next):
        A = A_stack[j]
        for yb in range(n_branches):
            p = preds[yb]
            corr = float(p @ mshift[j])
            rate, dist, iters, gap, _, _ = _branch(
                p, A, rho, corr, s, eps, int(max_iter), q0.copy(), False
            )
            out_rate[j, yb] = rate
            out_dist[j, yb] = dist
            out_iters[j, yb] = iters
            out_gap[j, yb] = gap


def solve_span(preds, A_stack, mshift, rho, s, eps, max_iter,
               out_rate, out_dist, out_iters, out_gap):
    """Sweep a contiguous range of current grid points.

    ``preds`` is (span, n_branches, nx); outputs are (span, n_next,
    n_branches) slices of the stage tables, written in place.
    """
    for b in range(preds.shape[0]):
        solve_block(preds[b], A_stack, mshift, rho, s, eps, max_iter,
                    out_rate[b], out_dist[b], out_iters[b], out_gap[b])
