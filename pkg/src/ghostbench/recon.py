"""Image recovery from bucket measurements.

``solve_tv`` minimizes the split objective

    J(x, c) = |c|_1 + beta/2 |G x - c|^2 + mu/2 |S x - b|^2

in units where the estimated mean object level is fixed, which makes the
minimizer scale-covariant. It alternates an exact ``c`` update (soft
thresholding) with an inexact, warm-started conjugate-gradient ``x``
update. A step that would raise ``J`` is rejected, so the recorded
objective history is non-increasing. As ``beta`` grows the minimizer
approaches that of ``|G x|_1 + mu/2 |S x - b|^2``.

``solve_correlation`` is the classic second-order correlation estimate,
used both as a baseline and to initialize the TV solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import Image
from .forward import MeasurementSet
from .patterns import PatternSequence


class ReconstructionError(ValueError):
    pass


def gradient_apply(image) -> np.ndarray:
    """Forward differences, Neumann boundary; shape ``(2, H, W)`` = (d/dx, d/dy)."""
    data = image.data if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    dx, dy = kernels.grad_forward(data)
    return np.stack([dx, dy])


def gradient_adjoint(field) -> np.ndarray:
    """Adjoint of :func:`gradient_apply`; returns an ``(H, W)`` array."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or field.shape[0] != 2:
        raise ValueError(f"gradient field must have shape (2, H, W), got {field.shape}")
    return kernels.grad_adjoint(field[0], field[1])


def total_variation(x, isotropic: bool = False) -> float:
    g = gradient_apply(x)
    if isotropic:
        return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())
    return float(np.abs(g).sum())


@dataclass
class TvProblem:
    patterns: PatternSequence
    intensities: MeasurementSet
    fidelity_weight: float = 2.0**7
    penalty_weight: float = 2.0**4
    max_iterations: int = 300
    tolerance: float = 1e-4
    cg_iterations: int = 100
    isotropic: bool = False
    noise_aware: bool = True

    def __post_init__(self):
        if self.intensities.count != self.patterns.count:
            raise ReconstructionError(
                f"{self.intensities.count} intensities for {self.patterns.count} patterns")
        if not (self.fidelity_weight > 0 and self.penalty_weight > 0 and self.tolerance > 0):
            raise ReconstructionError("weights and tolerance must be positive")
        if self.max_iterations < 1 or self.cg_iterations < 1:
            raise ReconstructionError("iteration limits must be >= 1")

    @property
    def width(self) -> int:
        return self.patterns.width

    @property
    def height(self) -> int:
        return self.patterns.height


@dataclass
class TvSolution:
    image: Image
    iterations_used: int
    final_residual: float
    converged: bool
    raw: np.ndarray = field(repr=False)
    objective_history: list[float] = field(default_factory=list, repr=False)
    fidelity_used: float = 0.0


class _CenteredOperator:
    """``S`` split as mean-free rows plus a rank-one DC part.

    ``S x = P x + (s_mean . x) 1``, and because ``1^T P = 0`` the data misfit
    separates as ``|P x - (b - b_mean)|^2 + T (s_mean . x - b_mean)^2``.
    Products with ``S`` run per stage at cell resolution when the patterns
    carry their cell maps.
    """

    def __init__(self, patterns, b: np.ndarray):
        if isinstance(patterns, PatternSequence):
            self.blocks = patterns.cell_blocks()
            self.T, self.N = patterns.count, patterns.width * patterns.height
        else:
            S = np.asarray(patterns, dtype=np.float64)
            self.T, self.N = S.shape
            self.blocks = [(np.arange(self.T), S, None)]
        # single-precision copies of large blocks for the inner CG products
        self.fast_blocks = [
            (rows, B.astype(np.float32) if B.size >= FAST_BLOCK_SIZE else B, cop)
            for rows, B, cop in self.blocks
        ]
        self.s_mean = self.rmatvec_raw(np.ones(self.T)) / self.T
        self.b_mean = float(b.mean())
        self.y = b - self.b_mean

    def matvec_raw(self, x, fast=False):
        """``S x``."""
        out = np.empty(self.T)
        for rows, B, cop in self.fast_blocks if fast else self.blocks:
            v = x if cop is None else np.bincount(cop, weights=x, minlength=B.shape[1])
            out[rows] = B @ v.astype(B.dtype, copy=False)
        return out

    def rmatvec_raw(self, r, fast=False):
        """``S^T r``."""
        out = np.zeros(self.N)
        for rows, B, cop in self.fast_blocks if fast else self.blocks:
            v = r[rows].astype(B.dtype, copy=False) @ B
            out += v if cop is None else v[cop]
        return out

    def misfit(self, x):
        dc = float(self.s_mean @ x)
        r = self.matvec_raw(x) - dc - self.y
        e = dc - self.b_mean
        return float(r @ r + self.T * e * e)

    def normal(self, x, fast=False):
        """``S^T S x`` assembled from the centered and DC parts."""
        dc = float(self.s_mean @ x)
        p = self.matvec_raw(x, fast) - dc
        p -= p.mean()
        return self.rmatvec_raw(p, fast) - self.s_mean * p.sum() + self.T * self.s_mean * dc

    def adjoint_data(self):
        """``S^T b``."""
        return self.rmatvec_raw(self.y) + self.T * self.b_mean * self.s_mean


def _measurement_arrays(patterns, intensities):
    S = patterns.matrix() if isinstance(patterns, PatternSequence) else np.asarray(patterns, dtype=np.float64)
    b = intensities.intensities if isinstance(intensities, MeasurementSet) else np.asarray(intensities, dtype=np.float64)
    return S, np.asarray(b, dtype=np.float64)


def correlation_raw(patterns, intensities) -> np.ndarray:
    """Unscaled covariance ``<I S(x,y)> - <I><S(x,y)>`` per pixel."""
    S, b = _measurement_arrays(patterns, intensities)
    if S.shape[0] < 2:
        raise ReconstructionError("correlation needs at least two measurements")
    if not np.all(np.isfinite(b)):
        raise ReconstructionError("intensities must be finite")
    return (b @ S) / len(b) - b.mean() * S.mean(axis=0)


def solve_correlation(patterns, intensities, shape=None) -> Image:
    """Second-order correlation image, affinely rescaled to [0, 1].

    Raises when every pixel sees the same pattern values (no spatial
    variation to correlate against).
    """
    S, b = _measurement_arrays(patterns, intensities)
    if S.shape[0] >= 2 and np.all(S.var(axis=0) == 0):
        raise ReconstructionError("pattern sequence has zero variance at every pixel")
    g = correlation_raw(S, b)
    if shape is None:
        shape = (patterns.height, patterns.width) if isinstance(patterns, PatternSequence) else None
    if shape is None:
        side = int(round(np.sqrt(g.size)))
        shape = (side, side)
    lo, hi = g.min(), g.max()
    out = np.zeros_like(g) if hi == lo else (g - lo) / (hi - lo)
    return Image(out.reshape(shape))


REFERENCE_LEVEL = 0.5
INNER_RTOL_MAX = 0.1
INNER_RTOL_FACTOR = 0.1
FAST_BLOCK_SIZE = 1 << 20


def _intensity_scale(S, b) -> float:
    """Factor mapping the data to a mean object level of ``REFERENCE_LEVEL``.

    It is positively homogeneous in ``b``, so scaling object and intensities
    together scales the minimizer by the same factor.
    """
    mean_level = float(b.mean()) / max(float(S.sum(axis=1).mean()), 1e-300)
    if not mean_level > 1e-9:
        return 1.0
    return mean_level / REFERENCE_LEVEL


def _noise_capped_weight(problem: TvProblem, scale: float) -> float:
    """``fidelity_weight``, capped at ``1 / sigma_n**2`` for recorded noise.

    ``sigma_n`` is the noise std in the solver's normalized units. A fixed
    large weight fits the noise (and needs many more iterations to do so).
    """
    mu = problem.fidelity_weight
    noise = getattr(problem.intensities, "noise", None)
    if problem.noise_aware and noise is not None and noise.std_dev > 0:
        mu = min(mu, (scale / noise.std_dev) ** 2)
    return mu


def _initial_guess(op: _CenteredOperator, S, b, shape):
    """Correlation image, affinely fitted so that ``S x`` best matches ``b``."""
    try:
        g = correlation_raw(S, b)
    except ReconstructionError:
        g = np.zeros(S.shape[1])
    cols = np.stack([S @ g, S.sum(axis=1)], axis=1)
    coef, *_ = np.linalg.lstsq(cols, b, rcond=None)
    x = coef[0] * g + coef[1]
    return x.reshape(shape)


def _cg(apply, rhs, x0, iters, rtol=1e-10):
    """Conjugate gradients from ``x0``; stops once the residual falls by ``rtol``.

    Every iterate lowers the quadratic, so any stopping point keeps the outer
    objective monotone.
    """
    x = x0.copy()
    r = rhs - apply(x)
    p = r.copy()
    rs = float(r @ r)
    stop = rtol * rtol * rs
    for _ in range(iters):
        if rs <= stop:
            break
        Ap = apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            break
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def _shrink_field(v, t, isotropic):
    if not isotropic:
        return kernels.shrink(v, t)
    mag = np.sqrt(v[0] ** 2 + v[1] ** 2)
    scale = np.maximum(mag - t, 0.0) / np.where(mag > 0, mag, 1.0)
    return v * scale


def _tv_norm(c, isotropic):
    if isotropic:
        return float(np.sqrt(c[0] ** 2 + c[1] ** 2).sum())
    return float(np.abs(c).sum())


def solve_tv(problem: TvProblem) -> TvSolution:
    """Total-variation reconstruction; output clipped to [0, 1]."""
    S, b = _measurement_arrays(problem.patterns, problem.intensities)
    if not np.all(np.isfinite(b)):
        raise ReconstructionError("intensities must be finite")
    if not S.any():
        raise ReconstructionError("all patterns are empty; the object is unobservable")
    shape = (problem.height, problem.width)
    mu, beta = problem.fidelity_weight, problem.penalty_weight
    iso = problem.isotropic
    scale = _intensity_scale(S, b)
    b = b / scale
    mu = _noise_capped_weight(problem, scale)
    op = _CenteredOperator(problem.patterns, b)
    rhs_data = mu * op.adjoint_data()

    def hess(v):
        img = v.reshape(shape)
        return beta * gradient_adjoint(gradient_apply(img)).ravel() + mu * op.normal(v, fast=True)

    def objective(x, c):
        d = gradient_apply(x.reshape(shape)) - c
        return _tv_norm(c, iso) + 0.5 * beta * float((d * d).sum()) + 0.5 * mu * op.misfit(x)

    x = _initial_guess(op, S, b, shape).ravel()
    c = _shrink_field(gradient_apply(x.reshape(shape)), 1.0 / beta, iso)
    history = [objective(x, c)]
    converged = False
    it = 0
    change = 1.0
    for it in range(1, problem.max_iterations + 1):
        x_prev = x
        rhs = beta * gradient_adjoint(c).ravel() + rhs_data
        # inexact inner solves: tighten as the outer iterates settle
        inner_rtol = min(INNER_RTOL_MAX, max(INNER_RTOL_FACTOR * change, 1e-10))
        x = _cg(hess, rhs, x, problem.cg_iterations, inner_rtol)
        if objective(x, c) > history[-1]:
            # single-precision inner products can overshoot once the
            # iterates have settled; keep the last accepted point
            x = x_prev
            break
        c = _shrink_field(gradient_apply(x.reshape(shape)), 1.0 / beta, iso)
        history.append(objective(x, c))
        change = np.linalg.norm(x - x_prev) / max(np.linalg.norm(x_prev), 1e-12)
        if change < problem.tolerance:
            converged = True
            break
    resid = np.linalg.norm(S @ x - b) / max(np.linalg.norm(b), 1e-300)
    x = x * scale
    return TvSolution(
        image=Image.clipped(x.reshape(shape)),
        iterations_used=it,
        final_residual=float(resid),
        converged=converged,
        raw=x.reshape(shape),
        objective_history=history,
        fidelity_used=mu,
    )


__all__ = [
    "ReconstructionError", "TvProblem", "TvSolution", "gradient_apply", "gradient_adjoint",
    "solve_correlation", "solve_tv", "total_variation", "correlation_raw",
]
