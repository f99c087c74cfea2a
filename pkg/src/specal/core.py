"""Shared spectral types and elementary curve operations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHANNELS = ("r", "g", "b")


class SpecalError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 4


class DataError(SpecalError):
    exit_code = 4


class DegenerateInputError(DataError):
    pass


class OutOfRangeError(DataError):
    pass


class GridMismatchError(DataError):
    pass


class ConfigError(SpecalError):
    exit_code = 2


class NumericalError(SpecalError):
    exit_code = 3


class RankError(NumericalError):
    pass


class ConditionError(NumericalError):
    pass


def _readonly(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpectralGrid:
    """Uniformly spaced wavelength axis in nm."""

    lambda_min: float = 400.0
    lambda_max: float = 700.0
    f: int = 31

    def __post_init__(self):
        if int(self.f) != self.f or self.f < 2:
            raise ConfigError(f"grid needs at least 2 samples, got f={self.f}")
        if not self.lambda_min < self.lambda_max:
            raise ConfigError(
                f"lambda_min ({self.lambda_min}) must be below lambda_max ({self.lambda_max})")
        object.__setattr__(self, "f", int(self.f))
        object.__setattr__(self, "lambda_min", float(self.lambda_min))
        object.__setattr__(self, "lambda_max", float(self.lambda_max))

    @property
    def step(self) -> float:
        return (self.lambda_max - self.lambda_min) / (self.f - 1)

    @property
    def wavelengths(self) -> np.ndarray:
        return self.lambda_min + np.arange(self.f) * self.step

    @property
    def span(self) -> float:
        return self.lambda_max - self.lambda_min

    @classmethod
    def from_wavelengths(cls, wavelengths, rtol: float = 1e-6) -> "SpectralGrid":
        """Recover a grid from sample positions, rejecting non-uniform spacing."""
        wl = np.asarray(wavelengths, dtype=float)
        if wl.ndim != 1 or wl.size < 2:
            raise DataError("need at least two wavelength samples")
        grid = cls(wl[0], wl[-1], wl.size)
        if not np.allclose(wl, grid.wavelengths, rtol=0, atol=rtol * grid.span):
            raise DataError("wavelength samples are not uniformly spaced")
        return grid


@dataclass(frozen=True, eq=False)
class SpectralCurve:
    """Per-wavelength values on a grid (illuminant, efficiency, or one sensitivity channel)."""

    grid: SpectralGrid
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (self.grid.f,):
            raise GridMismatchError(
                f"curve has {values.shape} values, grid expects ({self.grid.f},)")
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, SpectralCurve):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def scaled(self, factor: float) -> "SpectralCurve":
        return SpectralCurve(self.grid, self.values * factor)

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))


@dataclass(frozen=True, eq=False)
class SensitivityTriplet:
    r: SpectralCurve
    g: SpectralCurve
    b: SpectralCurve

    def __post_init__(self):
        if not (self.r.grid == self.g.grid == self.b.grid):
            raise GridMismatchError("sensitivity channels are on different grids")

    @property
    def grid(self) -> SpectralGrid:
        return self.r.grid

    @property
    def channels(self) -> tuple[SpectralCurve, SpectralCurve, SpectralCurve]:
        return (self.r, self.g, self.b)

    def as_matrix(self) -> np.ndarray:
        """f x 3 array, one column per channel."""
        return np.column_stack([c.values for c in self.channels])

    @classmethod
    def from_matrix(cls, grid: SpectralGrid, matrix) -> "SensitivityTriplet":
        m = np.asarray(matrix, dtype=float)
        if m.shape != (grid.f, 3):
            raise GridMismatchError(f"expected ({grid.f}, 3) matrix, got {m.shape}")
        return cls(*(SpectralCurve(grid, m[:, k]) for k in range(3)))

    def scaled(self, factor: float) -> "SensitivityTriplet":
        return SensitivityTriplet.from_matrix(self.grid, self.as_matrix() * factor)

    def max_normalized(self) -> "SensitivityTriplet":
        """Divide by the largest response over all channels."""
        peak = np.max(self.as_matrix())
        if peak <= 0:
            raise DegenerateInputError("sensitivity has no positive response")
        return SensitivityTriplet.from_matrix(self.grid, self.as_matrix() / peak)

    def __eq__(self, other):
        if not isinstance(other, SensitivityTriplet):
            return NotImplemented
        return all(a == b for a, b in zip(self.channels, other.channels))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Direct RGB intensities plus the diffracted n x 3 profile along the dispersion axis."""

    m_dir: np.ndarray
    m_dif: np.ndarray
    pixel_positions: np.ndarray = field(default=None)

    def __post_init__(self):
        m_dir = _readonly(self.m_dir)
        m_dif = _readonly(self.m_dif)
        if m_dir.shape != (3,):
            raise DataError(f"m_dir must hold 3 values, got shape {m_dir.shape}")
        if m_dif.ndim != 2 or m_dif.shape[1] != 3:
            raise DataError(f"m_dif must be n x 3, got shape {m_dif.shape}")
        if self.pixel_positions is None:
            pixels = _readonly(np.arange(m_dif.shape[0], dtype=float))
        else:
            pixels = _readonly(self.pixel_positions)
        if pixels.shape != (m_dif.shape[0],):
            raise DataError("pixel_positions length does not match m_dif rows")
        steps = np.diff(pixels)
        if pixels.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
            raise DataError("pixel positions must be strictly monotonic")
        object.__setattr__(self, "m_dir", m_dir)
        object.__setattr__(self, "m_dif", m_dif)
        object.__setattr__(self, "pixel_positions", pixels)

    @property
    def n(self) -> int:
        return self.m_dif.shape[0]

    def check_against(self, grid: SpectralGrid) -> None:
        """Raise unless there are more diffracted pixels than wavelength samples."""
        if self.n <= grid.f:
            raise DataError(
                f"need more diffracted pixels than wavelengths (n={self.n}, f={grid.f})")

    def scaled(self, factor: float) -> "ObservationSet":
        return ObservationSet(self.m_dir * factor, self.m_dif * factor, self.pixel_positions)


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateInputError("cannot normalize a zero or non-finite vector")
    return v / norm


def resample(curve: SpectralCurve, target: SpectralGrid) -> SpectralCurve:
    """Linearly interpolate ``curve`` onto ``target``; negative results are clamped to 0."""
    src = curve.grid
    tol = 1e-9 * src.span
    if target.lambda_min < src.lambda_min - tol or target.lambda_max > src.lambda_max + tol:
        raise OutOfRangeError(
            f"target range [{target.lambda_min}, {target.lambda_max}] nm exceeds source "
            f"range [{src.lambda_min}, {src.lambda_max}] nm")
    if target == src:
        return SpectralCurve(target, np.maximum(curve.values, 0.0))
    values = np.interp(target.wavelengths, src.wavelengths, curve.values)
    return SpectralCurve(target, np.maximum(values, 0.0))


def resample_samples(wavelengths, values, target: SpectralGrid) -> SpectralCurve:
    """Interpolate arbitrary (possibly non-uniform) samples onto ``target``."""
    wl = np.asarray(wavelengths, dtype=float)
    vals = np.asarray(values, dtype=float)
    order = np.argsort(wl)
    wl, vals = wl[order], vals[order]
    tol = 1e-9 * target.span
    if target.lambda_min < wl[0] - tol or target.lambda_max > wl[-1] + tol:
        raise OutOfRangeError(
            f"samples cover [{wl[0]}, {wl[-1]}] nm, target needs "
            f"[{target.lambda_min}, {target.lambda_max}] nm")
    return SpectralCurve(target, np.maximum(np.interp(target.wavelengths, wl, vals), 0.0))


def aggregate_band(image_band) -> np.ndarray:
    """Average a cropped diffraction band across rows, giving one value per column.

    A rows x cols x channels array is reduced to cols x channels.
    """
    band = np.asarray(image_band, dtype=float)
    if band.ndim == 1:
        band = band[np.newaxis, :]
    if band.ndim not in (2, 3) or band.size == 0:
        raise DegenerateInputError("image band must be a nonempty 2D (or 2D x channel) array")
    return band.mean(axis=0)
