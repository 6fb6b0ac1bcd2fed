"""Probability objects, the source/distortion model, and stage functionals.

Orientation convention, used everywhere in this package: probability
matrices are column-stochastic and the conditioning variable indexes the
columns.  A belief P(x_prev | y_prev) is stored as ``columns[x_prev, y_prev]``
with each column summing to one; a source kernel P(x_t | x_{t-1}) is stored
as ``kernel[x_t, x_prev]``.  The one exception is the control policy
P(y_t | y_prev, x_t), stored as ``table[y_prev, x_t, y_t]`` so that each row
``table[y_prev, x_t, :]`` is a distribution over the current output symbol.

All logarithms are natural; rates are in nats.  Conversions to bits happen
only at the reporting edge (see the CLI).  The conventions 0*log(0) = 0 and
0*log(0/0) = 0 apply throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SupportViolationError, ValidationError

PROB_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def prob_vector(entries) -> np.ndarray:
    """Validate and freeze a probability vector (sum 1 within 1e-12, no negatives)."""
    v = np.asarray(entries, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"probability vector must be 1-D and non-empty, got shape {v.shape}")
    if np.any(v < 0):
        raise ValidationError(f"negative probability entry: {v.min()}")
    s = float(v.sum())
    if abs(s - 1.0) > PROB_TOL:
        raise ValidationError(f"probabilities sum to {s!r}, expected 1 within {PROB_TOL}")
    return _readonly(v)


def _check_column_stochastic(m: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{what} must be a 2-D matrix, got shape {m.shape}")
    if np.any(m < 0):
        raise ValidationError(f"{what} has a negative entry: {m.min()}")
    sums = m.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > PROB_TOL):
        raise ValidationError(f"{what} columns must sum to 1 within {PROB_TOL}, got {sums}")
    return _readonly(m)


def _xlogr(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num * log(num/den) with the 0*log(0/q) = 0 convention."""
    out = np.zeros_like(num)
    mask = num > 0
    out[mask] = num[mask] * (np.log(num[mask]) - np.log(den[mask]))
    return out


@dataclass(frozen=True)
class StageAlphabets:
    """Per-stage alphabet sizes |X_t| and |Y_t| for stages 0..n."""

    x_sizes: tuple[int, ...]
    y_sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.x_sizes) != len(self.y_sizes) or not self.x_sizes:
            raise ShapeError("x_sizes and y_sizes must be equal-length and non-empty")
        if any(s < 1 for s in self.x_sizes + self.y_sizes):
            raise ValidationError("alphabet sizes must be positive")

    @classmethod
    def uniform(cls, x_size: int, y_size: int, n: int) -> "StageAlphabets":
        return cls((x_size,) * (n + 1), (y_size,) * (n + 1))

    @property
    def horizon(self) -> int:
        return len(self.x_sizes) - 1

    def x_size(self, t: int) -> int:
        return self.x_sizes[t]

    def y_size(self, t: int) -> int:
        return self.y_sizes[t]


@dataclass(frozen=True)
class MarkovSource:
    """Initial distribution P_0(x_0) plus transition kernels P_t(x_t|x_{t-1}).

    ``kernels[t-1]`` is the stage-t kernel, column-stochastic with
    ``kernel[x_t, x_prev]``, for t = 1..n.
    """

    initial: np.ndarray
    kernels: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "initial", prob_vector(self.initial))
        checked = []
        size = self.initial.size
        for i, k in enumerate(self.kernels):
            k = _check_column_stochastic(k, f"source kernel for stage {i + 1}")
            if k.shape[1] != size:
                raise ShapeError(
                    f"stage {i + 1} kernel has {k.shape[1]} columns, expected {size}"
                )
            size = k.shape[0]
            checked.append(k)
        object.__setattr__(self, "kernels", tuple(checked))

    @property
    def horizon(self) -> int:
        return len(self.kernels)

    def kernel(self, t: int) -> np.ndarray:
        """Transition kernel for stage t, valid for t in 1..n."""
        if not 1 <= t <= self.horizon:
            raise ShapeError(f"no kernel for stage {t} (horizon {self.horizon})")
        return self.kernels[t - 1]

    def x_size(self, t: int) -> int:
        return self.initial.size if t == 0 else self.kernels[t - 1].shape[0]

    @classmethod
    def binary_symmetric(cls, alphas, n: int | None = None, initial=None) -> "MarkovSource":
        """Binary source with flip probability alpha_t per stage.

        ``alphas`` is a scalar (stationary, requires ``n``) or a sequence of
        length n.  The kernel is [[1-a, a], [a, 1-a]].
        """
        if np.isscalar(alphas):
            if n is None:
                raise ValidationError("scalar alpha requires an explicit horizon n")
            alphas = [float(alphas)] * n
        alphas = [float(a) for a in alphas]
        if any(not 0.0 < a < 1.0 for a in alphas):
            raise ValidationError(f"alpha values must lie in (0,1), got {alphas}")
        if initial is None:
            initial = np.array([0.5, 0.5])
        kernels = tuple(np.array([[1 - a, a], [a, 1 - a]]) for a in alphas)
        return cls(np.asarray(initial, dtype=np.float64), kernels)


@dataclass(frozen=True)
class DistortionModel:
    """Per-stage distortion matrices rho_t[x_t, y_t] >= 0 for t = 0..n."""

    rhos: tuple[np.ndarray, ...]

    def __post_init__(self):
        checked = []
        for t, r in enumerate(self.rhos):
            r = np.asarray(r, dtype=np.float64)
            if r.ndim != 2:
                raise ShapeError(f"stage {t} distortion must be a matrix, got shape {r.shape}")
            if np.any(r < 0):
                raise ValidationError(f"stage {t} distortion has negative entries")
            checked.append(_readonly(r))
        if not checked:
            raise ShapeError("need at least the stage-0 distortion matrix")
        object.__setattr__(self, "rhos", tuple(checked))

    @property
    def horizon(self) -> int:
        return len(self.rhos) - 1

    def rho(self, t: int) -> np.ndarray:
        return self.rhos[t]

    @classmethod
    def hamming(cls, x_size: int, y_size: int, n: int) -> "DistortionModel":
        m = 1.0 - np.eye(x_size, y_size)
        return cls((m,) * (n + 1))


@dataclass(frozen=True)
class Belief:
    """Posterior P(x_prev | y_prev): one probability column per y_prev."""

    columns: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "columns", _check_column_stochastic(self.columns, "belief")
        )

    @property
    def x_size(self) -> int:
        return self.columns.shape[0]

    @property
    def y_size(self) -> int:
        return self.columns.shape[1]

    def column(self, y_prev: int) -> np.ndarray:
        return self.columns[:, y_prev]


@dataclass(frozen=True)
class PredictiveBelief:
    """One-step source prediction P(x_t | y_prev): kernel applied to a belief."""

    columns: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "columns", _check_column_stochastic(self.columns, "predictive belief")
        )

    def column(self, y_prev: int) -> np.ndarray:
        return self.columns[:, y_prev]


@dataclass(frozen=True)
class Policy:
    """Control policy P(y_t | y_prev, x_t), stored as table[y_prev, x_t, y_t]."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 3:
            raise ShapeError(f"policy table must be 3-D, got shape {t.shape}")
        if np.any(t < 0):
            raise ValidationError("policy has negative entries")
        sums = t.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            raise ValidationError(f"policy rows must sum to 1 within {PROB_TOL}")
        object.__setattr__(self, "table", _readonly(t))

    def branch(self, y_prev: int) -> np.ndarray:
        """Rows P(y_t | y_prev, x_t) for a fixed y_prev, shape (x, y)."""
        return self.table[y_prev]


@dataclass(frozen=True)
class OutputKernel:
    """Output distribution P(y_t | y_prev): one probability column per y_prev."""

    columns: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "columns", _check_column_stochastic(self.columns, "output kernel")
        )

    def column(self, y_prev: int) -> np.ndarray:
        return self.columns[:, y_prev]


@dataclass(frozen=True)
class LagrangeSchedule:
    """Per-stage trade-off prices s_t <= 0 for stages 0..n."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ShapeError("schedule needs at least the stage-0 value")
        if any(v > 0 for v in vals):
            raise ValidationError(f"all prices must be <= 0, got {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, s: float, n: int) -> "LagrangeSchedule":
        return cls((float(s),) * (n + 1))

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, t: int) -> float:
        return self.values[t]


@dataclass(frozen=True)
class StagePoint:
    """A (rate, distortion) pair for one stage; rate in nats."""

    rate: float
    distortion: float

    def __post_init__(self):
        # clip the harmless negative dust that exact-zero cases produce
        for name in ("rate", "distortion"):
            v = float(getattr(self, name))
            if v < -1e-9:
                raise ValidationError(f"{name} must be nonnegative, got {v}")
            object.__setattr__(self, name, max(v, 0.0))


def predictive_belief(kernel: np.ndarray, belief: Belief) -> PredictiveBelief:
    """Push a belief through the source kernel: column y_prev of the result
    is the kernel applied to belief column y_prev."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[1] != belief.x_size:
        raise ShapeError(
            f"kernel shape {kernel.shape} incompatible with belief rows {belief.x_size}"
        )
    return PredictiveBelief(kernel @ belief.columns)


def stage_objective(
    pred: PredictiveBelief,
    policy: Policy,
    output: OutputKernel,
    lookahead,
    branch: int,
) -> float:
    """Stage cost for one branch y_prev, in nats.

    Returns sum_{x,y} pred(x) * policy(y|x) * [log(policy(y|x)/output(y)) +
    lookahead(y)].  With lookahead == 0 and the induced output this is the
    conditional mutual information of the stage, hence nonnegative.
    """
    p = pred.column(branch)
    phi = policy.branch(branch)
    q = output.column(branch)
    lam = np.zeros(q.size) if lookahead is None else np.asarray(lookahead, dtype=np.float64)
    if phi.shape != (p.size, q.size) or lam.shape != q.shape:
        raise ShapeError(
            f"inconsistent shapes: pred {p.shape}, policy {phi.shape}, "
            f"output {q.shape}, lookahead {lam.shape}"
        )
    dead = q <= 0.0
    if np.any(dead) and np.any(phi[:, dead] > 0):
        raise SupportViolationError(
            "policy places mass on an output symbol with zero marginal probability"
        )
    ratio = _xlogr(phi, np.broadcast_to(q, phi.shape))
    return float(p @ (ratio + phi * lam).sum(axis=1))


def stage_distortion(
    pred: PredictiveBelief, policy: Policy, rho: np.ndarray, branch: int
) -> float:
    """Expected distortion for one branch: sum_{x,y} pred(x) policy(y|x) rho(x,y)."""
    p = pred.column(branch)
    phi = policy.branch(branch)
    rho = np.asarray(rho, dtype=np.float64)
    if phi.shape != rho.shape or p.size != rho.shape[0]:
        raise ShapeError(
            f"inconsistent shapes: pred {p.shape}, policy {phi.shape}, rho {rho.shape}"
        )
    return float(p @ (phi * rho).sum(axis=1))


def bayes_belief_update(
    belief: Belief, policy: Policy, kernel: np.ndarray
) -> tuple[Belief, tuple[int, ...]]:
    """One step of the belief recursion.

    Column y_t of the result is sum_{y_prev, x_prev} policy(y_t|y_prev, x_t)
    * kernel(x_t|x_prev) * belief(x_prev|y_prev), normalized over x_t.  An
    output symbol whose normalizer vanishes is unreachable; its column is
    set to uniform and its index is reported in the returned flag tuple so
    the caller can decide what to do with it.
    """
    mid = predictive_belief(kernel, belief).columns  # (x_t, y_prev)
    table = policy.table  # (y_prev, x_t, y_t)
    if table.shape[0] != mid.shape[1] or table.shape[1] != mid.shape[0]:
        raise ShapeError(
            f"policy table shape {table.shape} incompatible with predictive {mid.shape}"
        )
    num = np.einsum("bxy,xb->xy", table, mid)  # (x_t, y_t)
    denom = num.sum(axis=0)
    nx, ny = num.shape
    cols = np.empty_like(num)
    flagged = []
    for y in range(ny):
        if denom[y] <= 0.0:
            cols[:, y] = 1.0 / nx
            flagged.append(y)
        else:
            cols[:, y] = num[:, y] / denom[y]
    return Belief(cols), tuple(flagged)


def output_marginal_step(prev: np.ndarray, output: OutputKernel) -> np.ndarray:
    """Advance the output marginal: result[y_t] = sum_y_prev P(y_t|y_prev) prev[y_prev]."""
    prev = prob_vector(prev)
    if output.columns.shape[1] != prev.size:
        raise ShapeError(
            f"output kernel has {output.columns.shape[1]} columns, marginal size {prev.size}"
        )
    return prob_vector(output.columns @ prev)
