"""Offline backward sweep over stages and belief-grid cells.

For each stage t = n..1, each current grid point b, each next-stage grid
point b', and each branch symbol y_prev, one alternating-minimization solve
produces the cell value (rate including look-ahead) and parametric
distortion.  The look-ahead for stage t is the stage-(t+1) value closure
V_{t+1}(y_t, b') = min_{b''} rate_{t+1}[b', b'', y_t]; the terminal stage
uses the zero map, so its next-point axis has size one.

Parallelism: within a stage, each task sweeps a contiguous span of current
grid points through all their (b', y_prev) cells.  Tasks touch disjoint
table slices and the per-stage value closure runs single-threaded after a
barrier, so results are bit-identical for any worker count.  Threads carry
the work when the compiled kernel is active (it releases the GIL); the
pure backend falls back to processes.

Stage 0 is not swept here; the forward pass handles it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ShapeError, TableIOError, TableSizeError, ValidationError
from .grid import BeliefGrid, generate_grid
from .model import DistortionModel, LagrangeSchedule, MarkovSource

FORMAT_MAGIC = b"NRDFTBL\x01"
FORMAT_VERSION = 1
DEFAULT_MEMORY_CAP_MB = 2048
_NONCONV_KEEP = 1000


@dataclass(frozen=True)
class StageTables:
    """Cell tables for one stage t: rate/dist/iters are (nb, nb_next, ny_prev),
    value is (ny, nb) with value[y][b] = min over b' of rate[b][b'][y]."""

    t: int
    rate: np.ndarray
    dist: np.ndarray
    iters: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        for name in ("rate", "dist", "iters", "value"):
            getattr(self, name).setflags(write=False)


@dataclass(frozen=True)
class BackwardTables:
    """Output of the backward sweep plus the configuration echo."""

    stages: tuple[StageTables, ...]  # index 0 holds stage t=1
    grids: tuple[BeliefGrid, ...]  # grids[t-1] is the stage-t belief grid
    s: LagrangeSchedule
    eps: float
    max_iter: int
    fingerprint: str
    nonconverged: tuple[tuple[int, int, int, int, float], ...] = ()
    nonconverged_count: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.stages)

    def stage(self, t: int) -> StageTables:
        if not 1 <= t <= self.horizon:
            raise ShapeError(f"no tables for stage {t} (stages 1..{self.horizon})")
        return self.stages[t - 1]

    @property
    def cells_solved(self) -> int:
        return int(sum(s.rate.size for s in self.stages))

    def lookahead_column(self, t: int, next_index: int) -> np.ndarray:
        """Look-ahead values lam(y_t) = value_{t+1}[y_t, next_index]; zero map
        past the horizon."""
        if t >= self.horizon:
            ny = self.stages[-1].value.shape[0] if self.stages else 1
            return np.zeros(ny)
        return self.stage(t + 1).value[:, next_index]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for st in self.stages:
            for a in (st.rate, st.dist, st.iters, st.value):
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    @property
    def all_converged(self) -> bool:
        return self.nonconverged_count == 0


def model_fingerprint(
    source: MarkovSource,
    distortion: DistortionModel,
    grids,
    s: LagrangeSchedule,
    eps: float,
    max_iter: int,
) -> str:
    """Digest of everything that determines the table contents."""
    h = hashlib.sha256()
    h.update(struct.pack("<qdq", FORMAT_VERSION, eps, max_iter))
    h.update(source.initial.tobytes())
    for k in source.kernels:
        h.update(k.tobytes())
    for r in distortion.rhos:
        h.update(r.tobytes())
    h.update(np.asarray(s.values).tobytes())
    for g in grids:
        h.update(struct.pack("<qqq", g.x_size, g.y_size, g.n_levels))
        h.update(np.ascontiguousarray(g.candidates).tobytes())
    return h.hexdigest()


def _spans(total: int, workers: int) -> list[tuple[int, int]]:
    """Contiguous chunks, a few per worker so stragglers balance out."""
    chunks = min(total, max(workers * 4, 1))
    bounds = np.linspace(0, total, chunks + 1, dtype=int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _solve_span_task(args):
    """Process-pool task: solve a span and return the filled slices."""
    (kernel_name, b0, b1, preds, A_stack, mshift, rho, s_t, eps, max_iter) = args
    kern = backend.get_kernel(kernel_name)
    span = b1 - b0
    nb2 = A_stack.shape[0]
    nyp = preds.shape[1]
    rate = np.empty((span, nb2, nyp))
    dist = np.empty((span, nb2, nyp))
    iters = np.empty((span, nb2, nyp), dtype=np.int64)
    gap = np.empty((span, nb2, nyp))
    kern.solve_span(preds, A_stack, mshift, rho, s_t, eps, max_iter, rate, dist, iters, gap)
    return b0, b1, rate, dist, iters, gap


def backward_pass(
    source: MarkovSource,
    distortion: DistortionModel,
    grids,
    s: LagrangeSchedule,
    eps: float = 1e-6,
    max_iter: int = 10_000,
    workers: int = 1,
    memory_cap_mb: float = DEFAULT_MEMORY_CAP_MB,
    backend_name: str | None = None,
) -> BackwardTables:
    """Run the offline sweep for stages n..1 and close the per-stage values.

    ``grids[t-1]`` is the stage-t grid over (x_{t-1}, y_{t-1}).  Cells that
    hit ``max_iter`` with an open gap are recorded in ``nonconverged``
    rather than raised.
    """
    n = source.horizon
    grids = tuple(grids)
    if len(grids) != n:
        raise ShapeError(f"need one grid per stage 1..{n}, got {len(grids)}")
    if distortion.horizon != n:
        raise ShapeError(
            f"distortion horizon {distortion.horizon} != source horizon {n}"
        )
    if s.horizon != n:
        raise ShapeError(f"price schedule horizon {s.horizon} != source horizon {n}")
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    for t in range(1, n + 1):
        g = grids[t - 1]
        kern = source.kernel(t)
        if g.x_size != kern.shape[1]:
            raise ShapeError(
                f"stage {t} grid is over {g.x_size} source symbols, kernel expects {kern.shape[1]}"
            )
        if g.y_size != distortion.rho(t - 1).shape[1]:
            raise ShapeError(
                f"stage {t} grid has {g.y_size} branch columns, |Y_{t-1}| is "
                f"{distortion.rho(t - 1).shape[1]}"
            )

    est = 0
    for t in range(1, n + 1):
        nb = len(grids[t - 1])
        nb2 = 1 if t == n else len(grids[t])
        nyp = grids[t - 1].y_size
        ny = distortion.rho(t).shape[1]
        est += nb * nb2 * nyp * 24 + ny * nb * 8
    cap = int(memory_cap_mb * 1024 * 1024)
    if est > cap:
        raise TableSizeError(
            f"backward tables need ~{est / 1e6:.0f} MB, cap is {memory_cap_mb:.0f} MB; "
            "raise memory_cap_mb or shrink the grid/horizon"
        )

    kern_name = backend.active_name(backend_name)
    kern = backend.get_kernel(backend_name)
    fingerprint = model_fingerprint(source, distortion, grids, s, eps, max_iter)
    stage_results: dict[int, StageTables] = {}
    nonconv: list[tuple[int, int, int, int, float]] = []
    nonconv_count = 0
    value_next: np.ndarray | None = None  # (ny_t, nb_{t+1}) of stage t+1

    pool = None
    if workers > 1:
        pool_cls = ThreadPoolExecutor if kern_name == "compiled" else ProcessPoolExecutor
        pool = pool_cls(max_workers=workers)
    try:
        for t in range(n, 0, -1):
            grid_t = grids[t - 1]
            nb = len(grid_t)
            nyp = grid_t.y_size
            rho_t = np.ascontiguousarray(distortion.rho(t))
            ny = rho_t.shape[1]
            s_t = s[t]
            kernel_t = source.kernel(t)

            if t == n:
                lam_stack = np.zeros((1, ny))
            else:
                lam_stack = value_next.T  # (nb2, ny)
            nb2 = lam_stack.shape[0]

            # exponent weights for every next point at once, with per-x log
            # shifts so nothing can overflow (same arithmetic as
            # am.exponent_weights, batched)
            exponent = s_t * rho_t[None, :, :] - lam_stack[:, None, :]
            mshift = np.ascontiguousarray(exponent.max(axis=2))
            A_stack = np.ascontiguousarray(np.exp(exponent - mshift[:, :, None]))

            rate = np.empty((nb, nb2, nyp))
            dist = np.empty((nb, nb2, nyp))
            iters = np.empty((nb, nb2, nyp), dtype=np.int64)
            gaps = np.empty((nb, nb2, nyp))

            # preds[b, y_prev, x] = (kernel @ belief_b)[x, y_prev]
            preds_all = np.ascontiguousarray(
                np.einsum("ij,bjk->bki", kernel_t, grid_t.column_stack)
            )

            if pool is None:
                kern.solve_span(preds_all, A_stack, mshift, rho_t, s_t, eps,
                                max_iter, rate, dist, iters, gaps)
            elif kern_name == "compiled":
                # threads write disjoint slices in place; the kernel drops the GIL
                def run_span(span):
                    b0, b1 = span
                    kern.solve_span(preds_all[b0:b1], A_stack, mshift, rho_t,
                                    s_t, eps, max_iter, rate[b0:b1],
                                    dist[b0:b1], iters[b0:b1], gaps[b0:b1])

                list(pool.map(run_span, _spans(nb, workers)))
            else:
                tasks = [
                    (kern_name, b0, b1, preds_all[b0:b1], A_stack, mshift,
                     rho_t, s_t, eps, max_iter)
                    for b0, b1 in _spans(nb, workers)
                ]
                for b0, b1, r, d, it, g in pool.map(_solve_span_task, tasks):
                    rate[b0:b1], dist[b0:b1] = r, d
                    iters[b0:b1], gaps[b0:b1] = it, g

            bad = np.argwhere(gaps > eps)
            nonconv_count += len(bad)
            for b, j, yb in bad:
                if len(nonconv) < _NONCONV_KEEP:
                    nonconv.append((t, int(b), int(j), int(yb), float(gaps[b, j, yb])))

            value = rate.min(axis=1).T.copy()  # (nyp, nb); nyp here is |Y_{t-1}|
            stage_results[t] = StageTables(t=t, rate=rate, dist=dist, iters=iters, value=value)
            value_next = value
    finally:
        if pool is not None:
            pool.shutdown()

    return BackwardTables(
        stages=tuple(stage_results[t] for t in range(1, n + 1)),
        grids=grids,
        s=s,
        eps=eps,
        max_iter=max_iter,
        fingerprint=fingerprint,
        nonconverged=tuple(nonconv),
        nonconverged_count=nonconv_count,
        meta={
            "backend": kern_name,
            "workers": workers,
            "grid_levels": [g.n_levels for g in grids],
        },
    )


def save_tables(tables: BackwardTables, path) -> None:
    """Write a checksummed, versioned checkpoint; round-trips bit-exactly."""
    arrays = []
    manifest = []
    offset = 0
    for st in tables.stages:
        for name, a in (("rate", st.rate), ("dist", st.dist), ("iters", st.iters), ("value", st.value)):
            buf = np.ascontiguousarray(a)
            arrays.append(buf)
            manifest.append(
                {
                    "name": f"{name}_{st.t}",
                    "dtype": buf.dtype.str,
                    "shape": list(buf.shape),
                    "offset": offset,
                    "nbytes": buf.nbytes,
                }
            )
            offset += buf.nbytes
    payload = b"".join(a.tobytes() for a in arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "horizon": tables.horizon,
        "eps": tables.eps,
        "max_iter": tables.max_iter,
        "s": list(tables.s.values),
        "fingerprint": tables.fingerprint,
        "grids": [
            {"x_size": g.x_size, "y_size": g.y_size, "n_levels": g.n_levels}
            for g in tables.grids
        ],
        "arrays": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "nonconverged": [list(x) for x in tables.nonconverged],
        "nonconverged_count": tables.nonconverged_count,
        "meta": tables.meta,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(FORMAT_MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        f.write(payload)


def load_tables(path) -> BackwardTables:
    """Read a checkpoint written by ``save_tables``, verifying the checksum."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise TableIOError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < len(FORMAT_MAGIC) + 8 or raw[: len(FORMAT_MAGIC) - 1] != FORMAT_MAGIC[:-1]:
        raise TableIOError(f"{path} is not a table checkpoint (bad magic)")
    if raw[: len(FORMAT_MAGIC)] != FORMAT_MAGIC:
        raise TableIOError(
            f"{path} has format version {raw[len(FORMAT_MAGIC) - 1]}, expected {FORMAT_VERSION}"
        )
    pos = len(FORMAT_MAGIC)
    (head_len,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if pos + head_len > len(raw):
        raise TableIOError(f"{path} is truncated (header)")
    try:
        header = json.loads(raw[pos : pos + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TableIOError(f"{path} has a corrupt header: {e}") from e
    pos += head_len
    payload = raw[pos:]
    expected = sum(a["nbytes"] for a in header["arrays"])
    if len(payload) != expected:
        raise TableIOError(
            f"{path} is truncated: payload {len(payload)} bytes, expected {expected}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise TableIOError(f"{path} failed its payload checksum")

    arrays = {}
    for m in header["arrays"]:
        a = np.frombuffer(
            payload, dtype=np.dtype(m["dtype"]), count=int(np.prod(m["shape"], dtype=np.int64)),
            offset=m["offset"],
        ).reshape(m["shape"]).copy()
        arrays[m["name"]] = a
    # the checkpoint's grids were generated once already; no size cap on reload
    grids = tuple(
        generate_grid(g["x_size"], g["y_size"], g["n_levels"], max_points=float("inf"))
        for g in header["grids"]
    )
    stages = tuple(
        StageTables(
            t=t,
            rate=arrays[f"rate_{t}"],
            dist=arrays[f"dist_{t}"],
            iters=arrays[f"iters_{t}"],
            value=arrays[f"value_{t}"],
        )
        for t in range(1, header["horizon"] + 1)
    )
    return BackwardTables(
        stages=stages,
        grids=grids,
        s=LagrangeSchedule(tuple(header["s"])),
        eps=header["eps"],
        max_iter=header["max_iter"],
        fingerprint=header["fingerprint"],
        nonconverged=tuple(tuple(x) for x in header["nonconverged"]),
        nonconverged_count=header["nonconverged_count"],
        meta=header["meta"],
    )
