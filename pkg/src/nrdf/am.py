"""One dynamic-programming cell: alternating minimization with certified stopping.

A cell fixes a stage, a branch symbol y_prev, a predicted source distribution
over x, a price s <= 0, and a look-ahead cost per output symbol.  The solver
alternates two closed-form updates:

    policy update   phi(y|x)  =  q(y) A(x,y) / sum_y' q(y') A(x,y')
    output update   q'(y)     =  q(y) * sum_x p(x) A(x,y) / sum_y' q(y') A(x,y')

with exponent weights A(x,y) = exp(s*rho(x,y) - lookahead(y)).  With zero
look-ahead and a single branch this is exactly the classical rate-distortion
iteration for the memoryless source p.

Termination is certified by two computable bounds on the optimal cell value:
with c(y) = sum_x p(x) A(x,y)/den(x) and V = s*D - sum_x p(x) log den(x),

    upper = V - sum_y q(y) c(y) log c(y)      (subtracted term: t_upper_term)
    lower = V - max_y log c(y)                (subtracted term: t_lower_term)

The gap upper - lower = t_lower_term - t_upper_term >= 0 shrinks to zero at
the fixed point; iteration stops once it is <= eps.

Overflow safety: weights are always built with a per-x log shift
m(x) = max_y (s*rho(x,y) - lookahead(y)), so the stored matrix has row
maxima of one.  The shift cancels in every update and in the gap; only the
reported rate needs the correction sum_x p(x) m(x), which the solver applies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import backend
from .errors import ShapeError, ValidationError
from .model import StagePoint, prob_vector

DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class ExponentWeights:
    """Exponent weights exp(s*rho - lookahead), stored with a per-x log shift.

    The true weight is ``weights[x, y] * exp(shift[x])``; ``dense()``
    materializes it.  Updates and stopping bounds are invariant to the
    shift, so the solver consumes ``weights`` directly.
    """

    weights: np.ndarray  # (nx, ny), row maxima exactly 1
    shift: np.ndarray  # (nx,) log-domain row shifts

    def dense(self) -> np.ndarray:
        return self.weights * np.exp(self.shift)[:, None]


class StoppingBounds(NamedTuple):
    """Ingredients of the stopping rule for one iterate.

    ``t_upper_term``/``t_lower_term`` are the terms subtracted inside the
    upper/lower bound on the optimal cell value; the bracket width is
    ``t_lower_term - t_upper_term >= 0``.
    """

    t_upper_term: float
    t_lower_term: float
    c: np.ndarray

    @property
    def gap(self) -> float:
        return self.t_lower_term - self.t_upper_term


@dataclass(frozen=True)
class AmTrace:
    """Per-iteration diagnostics of one solve (indexed by iteration)."""

    objective: np.ndarray  # Lagrangian I - s*D at the policy-updated iterate
    t_upper_term: np.ndarray
    t_lower_term: np.ndarray
    distortion: np.ndarray

    def __len__(self) -> int:
        return self.objective.size

    @property
    def gap(self) -> np.ndarray:
        return self.t_lower_term - self.t_upper_term

    def bounds(self, s: float, dist: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-iteration (upper, lower) bounds on the optimal cell value,
        evaluated at the parametric distortion ``dist``."""
        base = s * dist + self.objective
        return base - self.t_upper_term, base - self.t_lower_term


@dataclass(frozen=True)
class AmResult:
    """Converged branch policy/output with the achieved stage point."""

    policy_branch: np.ndarray  # (nx, ny), row x is P(y | y_prev, x)
    output_branch: np.ndarray  # (ny,)
    point: StagePoint
    iterations: int
    final_gap: float
    converged: bool
    trace: AmTrace | None = None


def exponent_weights(rho: np.ndarray, s: float, lookahead=None) -> ExponentWeights:
    """Build the update weights exp(s*rho(x,y) - lookahead(y))."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 2:
        raise ShapeError(f"distortion matrix must be 2-D, got shape {rho.shape}")
    if s > 0:
        raise ValidationError(f"price must be <= 0, got {s}")
    lam = np.zeros(rho.shape[1]) if lookahead is None else np.asarray(lookahead, dtype=np.float64)
    if lam.shape != (rho.shape[1],):
        raise ShapeError(f"lookahead shape {lam.shape} != ({rho.shape[1]},)")
    if not np.all(np.isfinite(lam)):
        raise ValidationError("lookahead values must be finite")
    exponent = s * rho - lam[None, :]
    shift = exponent.max(axis=1)
    return ExponentWeights(np.exp(exponent - shift[:, None]), shift)


def policy_update(prev_output: np.ndarray, weights: ExponentWeights) -> np.ndarray:
    """Minimizing policy for a fixed output: row x is q*A(x,:) renormalized."""
    q = np.asarray(prev_output, dtype=np.float64)
    num = q[None, :] * weights.weights
    den = num.sum(axis=1, keepdims=True)
    if np.any(den <= 0):
        raise ValidationError("previous output must be strictly positive")
    return num / den


def output_update(
    prev_output: np.ndarray, pred_col: np.ndarray, weights: ExponentWeights
) -> np.ndarray:
    """Minimizing output for the policy implied by ``prev_output``."""
    q = np.asarray(prev_output, dtype=np.float64)
    p = np.asarray(pred_col, dtype=np.float64)
    den = weights.weights @ q
    c = (p / den) @ weights.weights
    new = q * c
    total = new.sum()
    if abs(total - 1.0) > 1e-12:
        raise ValidationError(f"output update lost normalization: sum {total!r}")
    return new / total


def stopping_gap(
    output: np.ndarray, pred_col: np.ndarray, weights: ExponentWeights
) -> StoppingBounds:
    """Stopping-bound terms at the current output distribution."""
    q = np.asarray(output, dtype=np.float64)
    p = np.asarray(pred_col, dtype=np.float64)
    den = weights.weights @ q
    c = (p / den) @ weights.weights
    pos = c > 0.0
    logc = np.zeros_like(c)
    logc[pos] = np.log(c[pos])
    t_upper = float(np.sum(q[pos] * c[pos] * logc[pos]))
    t_lower = float(np.max(logc[pos]))
    return StoppingBounds(t_upper, t_lower, c)


def run_branch_am(
    pred_col,
    rho,
    s: float,
    lookahead=None,
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
    init_output=None,
    record_trace: bool = False,
    backend_name: str | None = None,
) -> AmResult:
    """Solve one cell to the stopping criterion.

    The returned rate includes the look-ahead contribution (it is the cell
    value used by the backward tables); the distortion is the parametric
    stage distortion at the converged policy.  ``converged`` is False when
    ``max_iter`` sweeps did not close the gap, never an exception.
    """
    p = prob_vector(pred_col)
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if max_iter < 1:
        raise ValidationError(f"max_iter must be >= 1, got {max_iter}")
    if rho.shape[0] != p.size:
        raise ShapeError(f"rho has {rho.shape[0]} rows, pred has {p.size}")
    w = exponent_weights(rho, s, lookahead)
    ny = rho.shape[1]
    if init_output is None:
        q0 = np.full(ny, 1.0 / ny)
    else:
        q0 = prob_vector(init_output)
        if q0.size != ny or np.any(q0 <= 0):
            raise ValidationError("init_output must be strictly positive over all y")
    corr = float(p @ w.shift)
    kern = backend.get_kernel(backend_name)
    rate, dist, iters, gap, q, phi, raw_trace = kern.solve_cell(
        p, w.weights, rho, corr, s, float(eps), int(max_iter), q0, record_trace
    )
    trace = AmTrace(*raw_trace) if raw_trace is not None else None
    return AmResult(
        policy_branch=phi,
        output_branch=q,
        point=StagePoint(rate=rate, distortion=dist),
        iterations=int(iters),
        final_gap=float(gap),
        converged=bool(gap <= eps),
        trace=trace,
    )
