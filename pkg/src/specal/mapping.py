"""Pixel-to-wavelength mapping: quadratic model, interpolation weights, and its estimators."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .core import (
    DataError,
    NumericalError,
    ObservationSet,
    RankError,
    SensitivityTriplet,
    SpectralCurve,
    SpectralGrid,
    normalize,
)

log = logging.getLogger(__name__)

ICP_ITERATIONS = 500


class InsufficientPeaksError(DataError):
    pass


class NonMonotoneMapError(NumericalError):
    pass


@dataclass(frozen=True)
class PixelToWavelengthMap:
    """lambda = a*q**2 + b*q + c with q = p - origin (nm)."""

    a: float
    b: float
    c: float
    origin: float = 0.0

    def __call__(self, pixels) -> np.ndarray:
        q = np.asarray(pixels, dtype=float) - self.origin
        return (self.a * q + self.b) * q + self.c

    def derivative(self, pixels) -> np.ndarray:
        q = np.asarray(pixels, dtype=float) - self.origin
        return 2 * self.a * q + self.b

    def is_monotone(self, pixels) -> bool:
        pixels = np.asarray(pixels, dtype=float)
        ends = np.array([pixels.min(), pixels.max()])
        # g' is affine, so checking the span endpoints is exact.
        return bool(np.all(self.derivative(ends) > 0))

    def covers(self, pixels, grid: SpectralGrid) -> bool:
        lam = self(pixels)
        return bool(lam.min() <= grid.lambda_min and lam.max() >= grid.lambda_max)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "origin": self.origin}

    @classmethod
    def from_dict(cls, d: dict) -> "PixelToWavelengthMap":
        return cls(float(d["a"]), float(d["b"]), float(d["c"]), float(d.get("origin", 0.0)))


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    W: np.ndarray
    out_of_range: int = 0

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def f(self) -> int:
        return self.W.shape[1]

    def column_rank(self) -> int:
        return int(np.linalg.matrix_rank(self.W))


def build_weight_matrix(mapping: PixelToWavelengthMap, pixels, grid: SpectralGrid) -> WeightMatrix:
    """Linear-interpolation weights placing each pixel's wavelength between two grid nodes.

    Pixels mapping outside the grid get an all-zero row and are counted in ``out_of_range``.
    """
    pixels = np.asarray(pixels, dtype=float)
    lam = mapping(pixels)
    step = grid.step
    pos = (lam - grid.lambda_min) / step
    tol = 1e-9
    inside = (pos >= -tol) & (pos <= grid.f - 1 + tol)
    pos = np.clip(pos, 0.0, grid.f - 1)
    lower = np.minimum(np.floor(pos).astype(int), grid.f - 2)
    frac = pos - lower
    W = np.zeros((pixels.size, grid.f))
    rows = np.nonzero(inside)[0]
    W[rows, lower[rows]] = 1.0 - frac[rows]
    W[rows, lower[rows] + 1] = frac[rows]
    n_out = int(pixels.size - rows.size)
    if n_out:
        log.debug("%d of %d pixels map outside [%g, %g] nm", n_out, pixels.size,
                  grid.lambda_min, grid.lambda_max)
    return WeightMatrix(W, n_out)


def box_smooth(x, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if width is None or width <= 1:
        return x
    kernel = np.ones(int(width)) / int(width)
    return np.convolve(x, kernel, mode="same")


def find_peaks(x, count: int, smooth_width: int | None = None) -> list[tuple[int, float]]:
    """Return the ``count`` highest interior local maxima as (index, height), by position.

    Flat-topped maxima count once, at the middle of the plateau.
    """
    x = box_smooth(x, smooth_width)
    if x.size < 3:
        raise InsufficientPeaksError("signal needs at least 3 samples")
    idx, _ = signal.find_peaks(x)
    if idx.size < count:
        raise InsufficientPeaksError(f"found {idx.size} peaks, need {count}")
    # Stable sort keeps the earlier peak on equal heights.
    top = idx[np.argsort(-x[idx], kind="stable")[:count]]
    top = np.sort(top)
    return [(int(i), float(x[i])) for i in top]


def fit_quadratic(pixels, wavelengths, origin: float = 0.0) -> PixelToWavelengthMap:
    """Least-squares quadratic through (pixel, wavelength) pairs."""
    q = np.asarray(pixels, dtype=float) - origin
    lam = np.asarray(wavelengths, dtype=float)
    distinct = np.unique(np.column_stack([q, lam]), axis=0)
    if np.unique(distinct[:, 0]).size < 3:
        raise RankError(
            f"need 3 distinct pixel positions to fit a quadratic, got {np.unique(distinct[:, 0]).size}")
    scale = max(np.max(np.abs(q)), 1.0)
    t = q / scale
    A = np.column_stack([t**2, t, np.ones_like(t)])
    coef, _, rank, _ = np.linalg.lstsq(A, lam, rcond=None)
    if rank < 3:
        raise RankError(f"quadratic fit is rank deficient (rank {rank})")
    return PixelToWavelengthMap(coef[0] / scale**2, coef[1] / scale, coef[2], origin)


def peak_correspondences(obs: ObservationSet, illuminant: SpectralCurve,
                         mean_s: SensitivityTriplet, smooth_width: int | None = None):
    """Pair the two strongest peaks per channel in pixel and wavelength domains by position."""
    grid = illuminant.grid
    pairs = []
    for k, s_bar in enumerate(mean_s.channels):
        try:
            pix = find_peaks(obs.m_dif[:, k], 2, smooth_width)
            wl = find_peaks(illuminant.values * s_bar.values, 2)
        except InsufficientPeaksError as exc:
            raise InsufficientPeaksError(f"channel {'RGB'[k]}: {exc}") from None
        for (i_p, _), (i_w, _) in zip(pix, wl):
            pairs.append((obs.pixel_positions[i_p], grid.wavelengths[i_w]))
    return np.array(pairs)


def estimate_map_peaks(obs: ObservationSet, illuminant: SpectralCurve, mean_s: SensitivityTriplet,
                       smooth_width: int | None = None) -> PixelToWavelengthMap:
    """Mapping from peak correspondences of a spiky (e.g. fluorescent) illuminant."""
    if illuminant.grid != mean_s.grid:
        raise DataError("illuminant and mean sensitivity are on different grids")
    pairs = peak_correspondences(obs, illuminant, mean_s, smooth_width)
    mapping = fit_quadratic(pairs[:, 0], pairs[:, 1], origin=obs.pixel_positions[0])
    if not mapping.is_monotone(obs.pixel_positions):
        raise NonMonotoneMapError(f"peak-fitted map is not increasing over the pixel span: {mapping}")
    return mapping


def initial_icp_params(n: int, f: int) -> tuple[float, float, float]:
    """Starting (a, b, c) in grid-index units per pixel: pixels 0..n spread over 0..f."""
    return 0.0, f / n, 0.0


@dataclass
class IcpResult:
    mapping: PixelToWavelengthMap
    objective_before: list = field(default_factory=list)
    objective_after: list = field(default_factory=list)
    normal_residual: list = field(default_factory=list)


def _icp_curves(obs: ObservationSet, illuminant: SpectralCurve, mean_s: SensitivityTriplet):
    n, f = obs.n, illuminant.grid.f
    # Unit-norm vectors of different lengths differ in amplitude by sqrt(n/f); undo that
    # so both curves have comparable heights.
    density = np.sqrt(n / f)
    u = np.column_stack([normalize(obs.m_dif[:, k]) * density for k in range(3)])
    v = np.column_stack([normalize(illuminant.values * s.values) for s in mean_s.channels])
    return u, v


def _segment_normals(v: np.ndarray, scale: float) -> np.ndarray:
    """Unit normals (f x 2) of the target polyline with vertices (j, scale * v[j])."""
    dy = scale * np.diff(v)
    d = np.column_stack([np.ones_like(dy), dy])
    nrm = np.column_stack([-d[:, 1], d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    return np.vstack([nrm, nrm[-1:]])


def icp_register(obs: ObservationSet, illuminant: SpectralCurve, mean_s: SensitivityTriplet,
                 iters: int = ICP_ITERATIONS, intensity_scale: float | None = None,
                 init: tuple[float, float, float] | None = None) -> IcpResult:
    """Point-to-plane ICP aligning the diffracted profile to the illuminant-weighted mean sensitivity.

    Works internally with wavelengths as grid indices and pixels rescaled to [0, 1].
    All three channels contribute to one joint least-squares update per iteration.
    """
    grid = illuminant.grid
    f, n = grid.f, obs.n
    if n < 3:
        raise DataError("need at least 3 diffracted pixels")
    pixels = obs.pixel_positions
    origin = pixels[0]
    span = pixels[-1] - origin
    t = (pixels - origin) / span
    design = np.column_stack([t**2, t, np.ones_like(t)])
    # intensity axis stretch, in grid-index units; smaller values lean on the wavelength axis
    scale = 0.1 * (f - 1) if intensity_scale is None else float(intensity_scale)

    u, v = _icp_curves(obs, illuminant, mean_s)
    Y = scale * u
    V = scale * v
    normals = [_segment_normals(v[:, k], scale) for k in range(3)]
    idx = np.arange(f, dtype=float)

    a0, b0, c0 = initial_icp_params(n, f) if init is None else init
    # per-pixel parameters (index units) -> per-unit-span parameters
    theta = np.array([a0 * span**2, b0 * span, c0])
    result = IcpResult(mapping=None)

    for it in range(iters):
        x = design @ theta
        rows, rhs = [], []
        for k in range(3):
            # nearest target vertex per source point
            d2 = (x[:, None] - idx[None, :]) ** 2 + (Y[:, k, None] - V[None, :, k]) ** 2
            j = np.argmin(d2, axis=1)
            nx, ny = normals[k][j, 0], normals[k][j, 1]
            rows.append(nx[:, None] * design)
            rhs.append(nx * idx[j] - ny * (Y[:, k] - V[j, k]))
        A = np.vstack(rows)
        y = np.concatenate(rhs)
        before = float(np.sum((A @ theta - y) ** 2))
        new_theta, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        if rank < 3 or not np.all(np.isfinite(new_theta)):
            raise NumericalError(f"ICP update is degenerate at iteration {it} (rank {rank})")
        theta = new_theta
        resid = A @ theta - y
        result.objective_before.append(before)
        result.objective_after.append(float(resid @ resid))
        gscale = np.linalg.norm(A.T @ y) + np.linalg.norm(A.T @ A @ theta)
        result.normal_residual.append(float(np.linalg.norm(A.T @ resid) / max(gscale, 1e-300)))
        if it % 100 == 0 or it == iters - 1:
            log.debug("icp iter %d objective %.6g", it, result.objective_after[-1])

    a_t, b_t, c_t = theta
    step = grid.step
    mapping = PixelToWavelengthMap(step * a_t / span**2, step * b_t / span,
                                   grid.lambda_min + step * c_t, origin)
    result.mapping = mapping
    return result


def estimate_map_icp(obs: ObservationSet, illuminant: SpectralCurve, mean_s: SensitivityTriplet,
                     iters: int = ICP_ITERATIONS, intensity_scale: float | None = None) -> PixelToWavelengthMap:
    """Mapping for smooth (LED-like) illuminants via point-to-plane ICP."""
    if illuminant.grid != mean_s.grid:
        raise DataError("illuminant and mean sensitivity are on different grids")
    mapping = icp_register(obs, illuminant, mean_s, iters, intensity_scale).mapping
    if not mapping.is_monotone(obs.pixel_positions):
        raise NonMonotoneMapError(f"ICP map is not increasing over the pixel span: {mapping}")
    return mapping


def mapping_re(estimated: PixelToWavelengthMap, truth: PixelToWavelengthMap, pixels,
               grid: SpectralGrid) -> float:
    """RMS wavelength discrepancy over ``pixels`` relative to the grid's wavelength range."""
    diff = estimated(pixels) - truth(pixels)
    return float(np.sqrt(np.mean(diff**2)) / grid.span)
