"""Run configuration: a single TOML file drives every command.

All experiment parameters live in the file; command-line flags only select
the command, the config path, and quick overrides for the horizon, grid
levels, and price.  Parsing followed by re-serialization is idempotent,
which keeps configs diffable and runs reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ValidationError
from .grid import DEFAULT_GRID_CAP, generate_grid
from .model import DistortionModel, LagrangeSchedule, MarkovSource


@dataclass(frozen=True)
class RunConfig:
    horizon: int = 0
    x_size: int = 2
    y_size: int = 2
    epsilon: float = 1e-6
    max_iter: int = 10_000
    workers: int = 1
    log_base: str = "nats"  # headline unit in printed summaries
    grid_cap: int = DEFAULT_GRID_CAP
    memory_cap_mb: float = 2048.0
    trace_every: int = 1  # 0 disables convergence traces
    selection: str = "bayes"
    backend: str = "auto"

    source_type: str = "binary_symmetric"
    alpha: float | None = 0.3
    alphas: tuple[float, ...] | None = None
    alpha_seed: int | None = None
    alpha_range: tuple[float, float] = (0.1, 0.45)
    initial: tuple[float, ...] | None = None
    kernels: tuple | None = None  # explicit source: kernels[t][x_t][x_prev]

    distortion_type: str = "hamming"
    distortion_matrices: tuple | None = None

    grid_levels: int | tuple[int, ...] = 10
    s: float | tuple[float, ...] = -1.0
    out_dir: str = "out"
    p0y: tuple[float, ...] | None = None
    sweep_s: tuple[float, ...] = (-0.5, -1.0, -2.0, -4.0)
    bench_workers: tuple[int, ...] = (1, 8)

    def validate(self) -> "RunConfig":
        if self.horizon < 0:
            raise ValidationError(f"horizon must be >= 0, got {self.horizon}")
        if self.x_size < 1 or self.y_size < 1:
            raise ValidationError("alphabet sizes must be >= 1")
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.log_base not in ("nats", "bits"):
            raise ValidationError(f"log_base must be 'nats' or 'bits', got {self.log_base!r}")
        if self.selection not in ("bayes", "value_argmin"):
            raise ValidationError(f"unknown selection rule {self.selection!r}")
        if self.trace_every < 0:
            raise ValidationError("trace_every must be >= 0")
        for v in self.schedule().values:
            if v > 0:
                raise ValidationError(f"price values must be <= 0, got {v}")
        levels = self.grid_levels if isinstance(self.grid_levels, tuple) else (self.grid_levels,)
        if any(int(lv) < 1 for lv in levels):
            raise ValidationError("grid levels must be >= 1")
        self._levels_list()  # length check against the horizon
        for w in self.bench_workers:
            if w < 1:
                raise ValidationError("bench worker counts must be >= 1")
        for sv in self.sweep_s:
            if sv > 0:
                raise ValidationError(f"sweep prices must be <= 0, got {sv}")
        self.source()  # exercises source/alpha validation
        self.distortion()
        return self

    # -- model builders ----------------------------------------------------

    def _alphas_list(self) -> list[float]:
        n = self.horizon
        if self.alphas is not None:
            if len(self.alphas) != n:
                raise ValidationError(
                    f"alphas has {len(self.alphas)} entries, horizon needs {n}"
                )
            return [float(a) for a in self.alphas]
        if self.alpha_seed is not None:
            lo, hi = self.alpha_range
            if not 0.0 < lo < hi < 1.0:
                raise ValidationError(f"alpha_range must satisfy 0 < lo < hi < 1, got {self.alpha_range}")
            rng = np.random.default_rng(self.alpha_seed)
            return [float(a) for a in rng.uniform(lo, hi, n)]
        if self.alpha is None:
            raise ValidationError("source needs alpha, alphas, or alpha_seed")
        return [float(self.alpha)] * n

    def source(self) -> MarkovSource:
        if self.source_type == "binary_symmetric":
            if self.x_size != 2 or self.y_size != 2:
                raise ValidationError("binary_symmetric source requires x_size = y_size = 2")
            return MarkovSource.binary_symmetric(
                self._alphas_list(), n=self.horizon, initial=self.initial
            )
        if self.source_type == "explicit":
            if self.kernels is None and self.horizon > 0:
                raise ValidationError("explicit source needs kernel matrices")
            initial = self.initial
            if initial is None:
                initial = (1.0 / self.x_size,) * self.x_size
            kernels = tuple(np.asarray(k, dtype=np.float64) for k in (self.kernels or ()))
            if len(kernels) != self.horizon:
                raise ValidationError(
                    f"explicit source has {len(kernels)} kernels, horizon needs {self.horizon}"
                )
            return MarkovSource(np.asarray(initial, dtype=np.float64), kernels)
        raise ValidationError(f"unknown source type {self.source_type!r}")

    def distortion(self) -> DistortionModel:
        if self.distortion_type == "hamming":
            return DistortionModel.hamming(self.x_size, self.y_size, self.horizon)
        if self.distortion_type == "explicit":
            if self.distortion_matrices is None:
                raise ValidationError("explicit distortion needs matrices")
            mats = tuple(np.asarray(m, dtype=np.float64) for m in self.distortion_matrices)
            if len(mats) == 1:
                mats = mats * (self.horizon + 1)
            if len(mats) != self.horizon + 1:
                raise ValidationError(
                    f"distortion has {len(mats)} matrices, horizon needs {self.horizon + 1}"
                )
            return DistortionModel(mats)
        raise ValidationError(f"unknown distortion type {self.distortion_type!r}")

    def _levels_list(self) -> list[int]:
        if isinstance(self.grid_levels, tuple):
            if len(self.grid_levels) != self.horizon:
                raise ValidationError(
                    f"grid levels has {len(self.grid_levels)} entries, horizon needs {self.horizon}"
                )
            return [int(v) for v in self.grid_levels]
        return [int(self.grid_levels)] * self.horizon

    def grids(self):
        cache: dict[int, object] = {}
        out = []
        for lv in self._levels_list():
            if lv not in cache:
                cache[lv] = generate_grid(
                    self.x_size, self.y_size, lv, max_points=self.grid_cap
                )
            out.append(cache[lv])
        return out

    def schedule(self) -> LagrangeSchedule:
        if isinstance(self.s, tuple):
            if len(self.s) != self.horizon + 1:
                raise ValidationError(
                    f"price schedule has {len(self.s)} entries, horizon needs {self.horizon + 1}"
                )
            return LagrangeSchedule(self.s)
        return LagrangeSchedule.constant(float(self.s), self.horizon)

    def with_s(self, s: float) -> "RunConfig":
        return replace(self, s=float(s))


def _deep_tuple(v):
    if isinstance(v, (list, tuple)):
        return tuple(_deep_tuple(x) for x in v)
    return v


def _get(section: dict, key: str, default):
    v = section.get(key, default)
    return _deep_tuple(v) if isinstance(v, list) else v


def from_toml(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ValidationError(f"config is not valid TOML: {e}") from e
    run = data.get("run", {})
    source = data.get("source", {})
    distortion = data.get("distortion", {})
    grid = data.get("grid", {})
    lagrange = data.get("lagrange", {})
    output = data.get("output", {})
    sweep = data.get("sweep", {})
    bench = data.get("bench", {})

    def tup_or_none(v):
        return tuple(v) if isinstance(v, (list, tuple)) else v

    cfg = RunConfig(
        horizon=int(run.get("horizon", 0)),
        x_size=int(run.get("x_size", 2)),
        y_size=int(run.get("y_size", 2)),
        epsilon=float(run.get("epsilon", 1e-6)),
        max_iter=int(run.get("max_iter", 10_000)),
        workers=int(run.get("workers", 1)),
        log_base=str(run.get("log_base", "nats")),
        grid_cap=int(run.get("grid_cap", DEFAULT_GRID_CAP)),
        memory_cap_mb=float(run.get("memory_cap_mb", 2048.0)),
        trace_every=int(run.get("trace_every", 1)),
        selection=str(run.get("selection", "bayes")),
        backend=str(run.get("backend", "auto")),
        source_type=str(source.get("type", "binary_symmetric")),
        alpha=source.get("alpha"),
        alphas=tup_or_none(source.get("alphas")),
        alpha_seed=source.get("alpha_seed"),
        alpha_range=tuple(source.get("alpha_range", (0.1, 0.45))),
        initial=tup_or_none(source.get("initial")),
        kernels=_get(source, "kernels", None),
        distortion_type=str(distortion.get("type", "hamming")),
        distortion_matrices=_get(distortion, "matrices", None),
        grid_levels=tup_or_none(grid.get("levels", 10)),
        s=tup_or_none(lagrange.get("s", -1.0)),
        out_dir=str(output.get("dir", "out")),
        p0y=tup_or_none(output.get("p0y")),
        sweep_s=tuple(sweep.get("s_values", (-0.5, -1.0, -2.0, -4.0))),
        bench_workers=tuple(bench.get("workers", (1, 8))),
    )
    if cfg.alpha is None and cfg.alphas is None and cfg.alpha_seed is None:
        cfg = replace(cfg, alpha=0.3)
    return cfg.validate()


def load(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return from_toml(f.read())
    except OSError as e:
        raise ValidationError(f"cannot read config {path}: {e}") from e


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise ValidationError(f"cannot serialize config value {v!r}")


def to_toml(cfg: RunConfig) -> str:
    """Deterministic serializer; from_toml(to_toml(c)) == c."""
    lines = ["[run]"]
    for key in (
        "horizon", "x_size", "y_size", "epsilon", "max_iter", "workers",
        "log_base", "grid_cap", "memory_cap_mb", "trace_every", "selection",
        "backend",
    ):
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    lines += ["", "[source]", f"type = {_fmt(cfg.source_type)}"]
    for key, name in (
        ("alpha", "alpha"), ("alphas", "alphas"), ("alpha_seed", "alpha_seed"),
        ("initial", "initial"), ("kernels", "kernels"),
    ):
        v = getattr(cfg, key)
        if v is not None:
            lines.append(f"{name} = {_fmt(v)}")
    lines.append(f"alpha_range = {_fmt(cfg.alpha_range)}")
    lines += ["", "[distortion]", f"type = {_fmt(cfg.distortion_type)}"]
    if cfg.distortion_matrices is not None:
        lines.append(f"matrices = {_fmt(cfg.distortion_matrices)}")
    lines += ["", "[grid]", f"levels = {_fmt(cfg.grid_levels)}"]
    lines += ["", "[lagrange]", f"s = {_fmt(cfg.s)}"]
    lines += ["", "[output]", f"dir = {_fmt(cfg.out_dir)}"]
    if cfg.p0y is not None:
        lines.append(f"p0y = {_fmt(cfg.p0y)}")
    lines += ["", "[sweep]", f"s_values = {_fmt(cfg.sweep_s)}"]
    lines += ["", "[bench]", f"workers = {_fmt(cfg.bench_workers)}"]
    return "\n".join(lines) + "\n"
