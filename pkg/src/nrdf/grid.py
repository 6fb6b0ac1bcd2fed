"""Finite quantization of the continuous belief space, with projection.

A grid point is a full belief matrix: one quantized probability column per
conditioning symbol y_prev.  For binary sources the column candidates are
(1 - a_i, a_i) with a_i = i/(N+1), i = 1..N, so all entries stay strictly
inside (0, 1) and the grid has N^|Y| points.  For larger source alphabets
the candidates generalize to the interior simplex lattice: all compositions
(k_1, ..., k_m)/q with positive parts and q = N + m - 1, ordered by
decreasing first-coordinate mass so the binary ordering (a ascending) is
recovered as a special case.

Point ordering is lexicographic in the per-column candidate indices with
column 0 most significant; generation is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from .errors import GridTooLargeError, ShapeError, ValidationError
from .model import Belief

DEFAULT_GRID_CAP = 250_000


def _column_candidates(x_size: int, n_levels: int) -> np.ndarray:
    """Quantized interior probability columns, shape (m, x_size)."""
    if x_size == 1:
        return np.ones((1, 1))
    if x_size == 2:
        alphas = np.arange(1, n_levels + 1) / (n_levels + 1.0)
        return np.column_stack([1.0 - alphas, alphas])
    q = n_levels + x_size - 1
    parts = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            parts.append(prefix + (remaining,))
            return
        for k in range(1, remaining - slots + 2):
            rec(prefix + (k,), remaining - k, slots - 1)

    rec((), q, x_size)
    parts.sort(key=lambda ks: tuple(-k for k in ks))
    return np.asarray(parts, dtype=np.float64) / q


@dataclass(frozen=True)
class BeliefGrid:
    """Ordered finite set of belief matrices over (x_size, y_size)."""

    x_size: int
    y_size: int
    n_levels: int
    candidates: np.ndarray  # (m, x_size) quantized columns
    points: tuple[Belief, ...]

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_candidates(self) -> int:
        return self.candidates.shape[0]

    @cached_property
    def column_stack(self) -> np.ndarray:
        """All point matrices as one (n_points, x_size, y_size) array."""
        return np.stack([p.columns for p in self.points])

    def point(self, idx: int) -> Belief:
        return self.points[idx]

    def level_indices(self, idx: int) -> tuple[int, ...]:
        """Per-column candidate indices of grid point ``idx`` (column 0 first)."""
        m = self.n_candidates
        out = []
        rem = idx
        for pos in range(self.y_size - 1, -1, -1):
            d, rem = divmod(rem, m**pos)
            out.append(d)
        return tuple(out)


def generate_grid(
    x_size: int, y_size: int, n_levels: int, max_points: int = DEFAULT_GRID_CAP
) -> BeliefGrid:
    """Build the belief grid for one stage.

    Raises GridTooLargeError when the candidate combinations would exceed
    ``max_points``.
    """
    if n_levels < 1:
        raise ValidationError(f"need at least 1 quantization level, got {n_levels}")
    if x_size < 1 or y_size < 1:
        raise ValidationError("alphabet sizes must be positive")
    cands = _column_candidates(x_size, n_levels)
    m = cands.shape[0]
    total = m**y_size
    if total > max_points:
        raise GridTooLargeError(
            f"grid would have {total} points ({m} columns ** {y_size}), cap is {max_points}"
        )
    points = tuple(
        Belief(np.column_stack([cands[i] for i in combo]))
        for combo in product(range(m), repeat=y_size)
    )
    return BeliefGrid(x_size, y_size, n_levels, cands, points)


def project(belief: Belief, grid: BeliefGrid) -> int:
    """Index of the grid point minimizing total L1 distance, lowest index on ties.

    The L1 distance separates across columns, so the search runs per column;
    picking the lowest candidate index within each column reproduces the
    global lowest-index tie-break because point ordering is lexicographic.
    """
    if belief.x_size != grid.x_size or belief.y_size != grid.y_size:
        raise ShapeError(
            f"belief shape ({belief.x_size},{belief.y_size}) does not match grid "
            f"({grid.x_size},{grid.y_size})"
        )
    m = grid.n_candidates
    idx = 0
    for y in range(grid.y_size):
        dists = np.abs(grid.candidates - belief.column(y)).sum(axis=1)
        idx = idx * m + int(np.argmin(dists))
    return idx


def projection_distance(belief: Belief, grid: BeliefGrid) -> float:
    """Total L1 distance from a belief to its projection."""
    p = grid.point(project(belief, grid))
    return float(np.abs(p.columns - belief.columns).sum())
