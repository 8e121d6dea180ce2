"""Experiment grids: method comparisons, noise sweeps and resolution scaling.

Every grid row ``(method, T, sigma, seed)`` is self-contained: its pattern
and noise seeds are hashed from the row seed with fixed labels, so any row
can be recomputed alone and rows may run concurrently in any order.
"""
from __future__ import annotations

import csv
import hashlib
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .cellmaps import RetinaSpec
from .core import Image, ImageError, RoiSpec, load_image, mse, psnr, resize_box, save_image
from .forward import NoiseModel, measure
from .objects import builtin_object
from .patterns import PatternError, build_schedule, generate_sequence, write_pattern_stack
from .recon import TvProblem, solve_tv

METHOD_FAMILY = {"UCGI": "uniform", "TVCGI": "temporal", "SVCGI": "spatial", "TSVCGI": "tsv"}
CSV_COLUMNS = ("method", "T", "sigma", "seed", "psnr_full_db", "psnr_roi_db", "mse",
               "iterations", "wall_ms")
BUILTIN_OBJECTS = ("peppers", "bit")
SIGMA_MODES = ("relative", "absolute")


class ConfigError(ValueError):
    pass


def derive_seed(row_seed: int, label: str) -> int:
    """64-bit seed for one purpose (``label``) within a grid row."""
    digest = hashlib.blake2b(f"{row_seed}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _ints(text):
    return tuple(int(v) for v in _items(text))


def _floats(text):
    return tuple(float(v) for v in _items(text))


def _items(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _optional(parse):
    def inner(text):
        if text is None or str(text).strip().lower() in ("", "none", "auto"):
            return None
        return parse(text)
    return inner


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment grid. ``roi`` and ``lowest_resolution`` default to
    a centered disk of radius M/4 and M/8 cells when left unset."""

    object_path: str = "peppers"
    actual_resolution: int = 64
    methods: tuple[str, ...] = ("UCGI", "TVCGI")
    measurement_counts: tuple[int, ...] = (410, 819, 1638)
    noise_sigmas: tuple[float, ...] = (0.0,)
    sigma_mode: str = "relative"
    roi: RoiSpec | None = None
    lowest_resolution: int | None = None
    roi_cell_size: int = 1
    seeds: tuple[int, ...] = (0,)
    resolutions: tuple[int, ...] = ()
    fidelity_weight: float = 2.0**7
    penalty_weight: float = 2.0**4
    max_iterations: int = 300
    tolerance: float = 1e-4
    cg_iterations: int = 100
    isotropic: bool = False
    save_stacks: bool = True
    workers: int | None = None
    output_dir: str = "ghostbench-out"

    def __post_init__(self):
        for name, kind in (("methods", str), ("measurement_counts", int), ("noise_sigmas", float),
                           ("seeds", int), ("resolutions", int)):
            object.__setattr__(self, name, tuple(kind(v) for v in getattr(self, name)))
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHOD_FAMILY]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; expected a subset of {tuple(METHOD_FAMILY)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if not self.measurement_counts:
            raise ConfigError("at least one measurement count is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.noise_sigmas:
            raise ConfigError("at least one noise sigma is required")
        if any(s < 0 or not np.isfinite(s) for s in self.noise_sigmas):
            raise ConfigError("noise sigmas must be finite and >= 0")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigError(f"sigma_mode must be one of {SIGMA_MODES}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for M in (self.actual_resolution, *self.resolutions):
            self._check_resolution(M)

    def _check_resolution(self, M: int):
        if M < 1:
            raise ConfigError("resolution must be positive")
        bad = [T for T in self.measurement_counts if not 1 <= T <= M * M]
        if bad:
            raise ConfigError(f"measurement counts {bad} outside 1..{M * M} at {M}x{M}")
        try:
            build_schedule(M, self.m1_for(M))
        except PatternError as exc:
            raise ConfigError(f"unsatisfiable schedule: {exc}") from exc
        try:
            self.roi_for(M).mask(M, M)
        except ImageError as exc:
            raise ConfigError(str(exc)) from exc

    def m1_for(self, M: int) -> int:
        return self.lowest_resolution if self.lowest_resolution is not None else max(M // 8, 1)

    def roi_for(self, M: int) -> RoiSpec:
        """The ROI at resolution ``M``; an explicit ROI is rescaled from
        ``actual_resolution`` so scaling studies keep the same region."""
        if self.roi is None:
            return RoiSpec.centered(M, M, M / 4)
        f = M / self.actual_resolution
        return RoiSpec(self.roi.center_x * f, self.roi.center_y * f, self.roi.radius * f)

    def solver_options(self) -> dict:
        return {
            "fidelity_weight": self.fidelity_weight, "penalty_weight": self.penalty_weight,
            "max_iterations": self.max_iterations, "tolerance": self.tolerance,
            "cg_iterations": self.cg_iterations, "isotropic": self.isotropic,
        }

    def to_mapping(self) -> dict[str, str]:
        """Flat ``key -> text`` form, the inverse of :func:`config_from_mapping`."""
        out = {}
        for key, f in _KEYS.items():
            value = getattr(self, f)
            if value is None:
                text = "auto"
            elif isinstance(value, tuple):
                text = ",".join(_fmt(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = _fmt(value) if isinstance(value, float) else str(value)
            out[key] = text
        return out


def _fmt(v) -> str:
    """Shortest exact text for floats (``0.01`` not ``0.010000``), ``str`` otherwise."""
    if isinstance(v, float):
        short = format(v, "g")
        return short if float(short) == v else repr(v)
    return str(v)


# config-file key -> (field name, parser)
_PARSERS = {
    "object": ("object_path", str),
    "resolution": ("actual_resolution", int),
    "methods": ("methods", lambda t: tuple(m.upper() for m in _items(t))),
    "counts": ("measurement_counts", _ints),
    "sigmas": ("noise_sigmas", _floats),
    "sigma_mode": ("sigma_mode", str),
    "roi": ("roi", _optional(lambda t: t if isinstance(t, RoiSpec) else RoiSpec.parse(str(t)))),
    "m1": ("lowest_resolution", _optional(int)),
    "roi_cell_size": ("roi_cell_size", int),
    "seeds": ("seeds", _ints),
    "resolutions": ("resolutions", _ints),
    "fidelity_weight": ("fidelity_weight", float),
    "penalty_weight": ("penalty_weight", float),
    "max_iterations": ("max_iterations", int),
    "tolerance": ("tolerance", float),
    "cg_iterations": ("cg_iterations", int),
    "isotropic": ("isotropic", _bool),
    "save_stacks": ("save_stacks", _bool),
    "workers": ("workers", _optional(int)),
    "out": ("output_dir", str),
}
_KEYS = {key: f for key, (f, _) in _PARSERS.items()}
assert set(_KEYS.values()) == {f.name for f in fields(ExperimentConfig)}


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def config_from_mapping(mapping: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key -> value`` overrides (config-file keys) on top of ``base``."""
    updates = {}
    for key, value in mapping.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}")
        name, parse = _PARSERS[key]
        try:
            updates[name] = parse(value)
        except (ValueError, ImageError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
    return replace(base or ExperimentConfig(), **updates)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    mapping = parse_config_text(text)
    mapping.update(overrides or {})
    return config_from_mapping(mapping)


# -- running ------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    method: str
    T: int
    sigma: float
    seed: int
    psnr_full_db: float
    psnr_roi_db: float
    mse: float
    iterations: int
    wall_ms: int

    def csv_fields(self, with_wall: bool = True) -> list[str]:
        out = [self.method, str(self.T), _fmt(self.sigma), str(self.seed),
               f"{self.psnr_full_db:.6f}", f"{self.psnr_roi_db:.6f}", f"{self.mse:.6f}",
               str(self.iterations)]
        return out + [str(self.wall_ms)] if with_wall else out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    resolution: int
    rows: list[ResultRow]
    images: dict[tuple, Image] = field(default_factory=dict, repr=False)
    stacks: dict[tuple, object] = field(default_factory=dict, repr=False)

    def select(self, **criteria) -> list[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in criteria.items())]

    def median(self, column: str, **criteria) -> float:
        values = [getattr(r, column) for r in self.select(**criteria)]
        if not values:
            raise KeyError(f"no rows match {criteria}")
        return float(np.median(values))

    def to_csv(self, with_wall: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS if with_wall else CSV_COLUMNS[:-1])
        for row in self.rows:
            writer.writerow(row.csv_fields(with_wall))
        return buf.getvalue()


def load_object(source: str, resolution: int) -> Image:
    """A built-in object by name, or an image file box-averaged to ``resolution``."""
    M = resolution
    if source in BUILTIN_OBJECTS:
        return builtin_object(source, M)
    image = load_image(source)
    if image.height != image.width:
        raise ImageError(f"object must be square, got {image.width}x{image.height}")
    return resize_box(image, M)


def _worker_count(config: ExperimentConfig, jobs: int) -> int:
    n = config.workers
    if n is None:
        env = os.environ.get("GHOSTBENCH_THREADS", "").strip()
        n = int(env) if env else (os.cpu_count() or 1)
    else:
        env = os.environ.get("GHOSTBENCH_THREADS", "").strip()
        if env:
            n = min(n, int(env))
    return max(1, min(n, jobs))


class _Row:
    """Inputs shared by all grid rows at one resolution."""

    def __init__(self, config: ExperimentConfig, M: int):
        self.config = config
        self.M = M
        self.obj = load_object(config.object_path, M)
        self.roi = config.roi_for(M)
        self.schedule = build_schedule(M, config.m1_for(M))
        self.retina = RetinaSpec.default(M, self.roi, config.roi_cell_size)

    def sequence(self, method: str, T: int, seed: int):
        return generate_sequence(METHOD_FAMILY[method], self.M, T, schedule=self.schedule,
                                 retina=self.retina, seed=derive_seed(seed, "patterns"))

    def run(self, method: str, T: int, sigma: float, seed: int):
        start = time.perf_counter()
        seq = self.sequence(method, T, seed)
        clean = measure(self.obj, seq)
        std = sigma * float(clean.intensities.mean()) if self.config.sigma_mode == "relative" else sigma
        noise = NoiseModel(0.0, std, derive_seed(seed, "noise"))
        ms = clean if std == 0 else measure(self.obj, seq, noise)
        sol = solve_tv(TvProblem(seq, ms, **self.config.solver_options()))
        wall = int(round((time.perf_counter() - start) * 1000))
        row = ResultRow(method, T, sigma, seed,
                        psnr(self.obj, sol.image).psnr_db,
                        psnr(self.obj, sol.image, self.roi).psnr_db,
                        mse(self.obj, sol.image), sol.iterations_used, wall)
        return row, sol.image


def grid(config: ExperimentConfig) -> list[tuple[str, int, float, int]]:
    """Row keys in CSV order."""
    return [(m, T, s, seed) for m in config.methods for T in config.measurement_counts
            for s in config.noise_sigmas for seed in config.seeds]


def run_experiment(config: ExperimentConfig, resolution: int | None = None,
                   emit: bool = True) -> ExperimentResult:
    """Run every ``(method, T, sigma, seed)`` row and optionally write reports."""
    M = resolution or config.actual_resolution
    ctx = _Row(config, M)
    keys = grid(config)
    with ThreadPoolExecutor(max_workers=_worker_count(config, len(keys))) as pool:
        outcomes = list(pool.map(lambda k: ctx.run(*k), keys))
    result = ExperimentResult(config, M, [row for row, _ in outcomes])
    result.images = {k: img for k, (_, img) in zip(keys, outcomes)}
    if config.save_stacks:
        T_max = max(config.measurement_counts)
        # shorter runs use prefixes of these stacks
        result.stacks = {(m, s): ctx.sequence(m, T_max, s) for m in config.methods for s in config.seeds}
    if emit:
        emit_reports(result, config.output_dir)
    return result


def run_noise_sweep(config: ExperimentConfig, emit: bool = True) -> ExperimentResult:
    """The method grid expanded over ``noise_sigmas``; noise is common across
    sigmas and methods for a seed, so sigma alone varies along a sweep."""
    if len(config.noise_sigmas) < 1:
        raise ConfigError("a noise sweep needs at least one sigma")
    return run_experiment(config, emit=emit)


@dataclass
class ScalingResult:
    results: dict[int, ExperimentResult]
    resolutions: tuple[int, ...]
    counts: tuple[int, ...]
    delta: np.ndarray  # (len(counts), len(resolutions)) median ROI PSNR gain, TSVCGI - UCGI

    def table(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["T"] + [f"delta_roi_db_{M}x{M}" for M in self.resolutions])
        for i, T in enumerate(self.counts):
            writer.writerow([T] + [f"{d:.6f}" for d in self.delta[i]])
        return buf.getvalue()


def run_resolution_scaling(config: ExperimentConfig, emit: bool = True) -> ScalingResult:
    """TSVCGI vs UCGI ROI PSNR at matched T for each of ``config.resolutions``.

    The gain per ``(resolution, T)`` is the median over seeds of the paired
    per-seed difference.
    """
    resolutions = config.resolutions or (config.actual_resolution,)
    if len(resolutions) < 1:
        raise ConfigError("scaling needs at least one resolution")
    cfg = replace(config, methods=("UCGI", "TSVCGI"))
    results = {}
    delta = np.zeros((len(cfg.measurement_counts), len(resolutions)))
    for j, M in enumerate(resolutions):
        sub = replace(cfg, output_dir=str(Path(cfg.output_dir) / f"M{M}"))
        res = results.get(M) or run_experiment(sub, resolution=M, emit=emit)
        results[M] = res
        for i, T in enumerate(cfg.measurement_counts):
            gains = []
            for seed in cfg.seeds:
                for sigma in cfg.noise_sigmas[:1]:
                    a = res.select(method="TSVCGI", T=T, seed=seed, sigma=sigma)[0]
                    b = res.select(method="UCGI", T=T, seed=seed, sigma=sigma)[0]
                    gains.append(a.psnr_roi_db - b.psnr_roi_db)
            delta[i, j] = float(np.median(gains))
    out = ScalingResult(results, tuple(resolutions), tuple(cfg.measurement_counts), delta)
    if emit:
        _atomic_write(Path(cfg.output_dir) / "delta_psnr.csv", out.table().encode())
    return out


# -- reports ------------------------------------------------------------------------

def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def image_name(method: str, T: int, sigma: float, seed: int) -> str:
    return f"{method}_T{T}_s{_fmt(sigma)}_seed{seed}.pgm"


def manifest_text(result: ExperimentResult) -> str:
    """A valid config file reproducing ``result``, with provenance comments."""
    cfg = replace(result.config, actual_resolution=result.resolution, resolutions=())
    lines = [
        f"# ghostbench {__version__} run manifest",
        f"# kernel backend: {kernels.BACKEND}",
    ]
    for seed in cfg.seeds:
        lines.append(f"# row seed {seed}: patterns {derive_seed(seed, 'patterns')}"
                     f" noise {derive_seed(seed, 'noise')}")
    lines += [f"{k} = {v}" for k, v in cfg.to_mapping().items()]
    return "\n".join(lines) + "\n"


def emit_reports(result: ExperimentResult, output_dir) -> Path:
    """Write results.csv, reconstruction PGMs, GPAT1 stacks and manifest.txt."""
    if not result.rows:
        raise ConfigError("nothing to report: the result has no rows")
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for key, image in result.images.items():
            target = out / image_name(*key)
            tmp = target.with_name(target.stem + ".tmp.pgm")
            save_image(image, tmp)
            os.replace(tmp, target)
        if result.stacks:
            (out / "stacks").mkdir(exist_ok=True)
            for (method, seed), seq in result.stacks.items():
                write_pattern_stack(seq, out / "stacks" / f"{method}_seed{seed}.gpat")
        _atomic_write(out / "results.csv", result.to_csv().encode())
        _atomic_write(out / "manifest.txt", manifest_text(result).encode())
    except (OSError, ImageError) as exc:
        raise ConfigError(f"cannot write reports to {out}: {exc}") from exc
    return out


__all__ = [
    "CSV_COLUMNS", "ConfigError", "ExperimentConfig", "ExperimentResult", "METHOD_FAMILY",
    "ResultRow", "ScalingResult", "config_from_mapping", "derive_seed", "emit_reports", "grid",
    "load_config", "load_object", "manifest_text", "parse_config_text", "run_experiment",
    "run_noise_sweep", "run_resolution_scaling",
]
