"""Forward simulation of direct and first-order diffracted observations.

Also holds the synthetic generators (sensitivities, illuminants, efficiencies, mappings)
used to build ground-truth scenes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import FOURIER_EFFICIENCY, BasisModel
from .core import (
    ConfigError,
    DataError,
    GridMismatchError,
    ObservationSet,
    SensitivityTriplet,
    SpectralCurve,
    SpectralGrid,
)
from .mapping import PixelToWavelengthMap, WeightMatrix, build_weight_matrix, fit_quadratic


class NoDiffractionError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class SceneSpec:
    illuminant: SpectralCurve
    efficiency: SpectralCurve
    sensitivity: SensitivityTriplet
    mapping: PixelToWavelengthMap
    n: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        grid = self.illuminant.grid
        if not (self.efficiency.grid == grid == self.sensitivity.grid):
            raise GridMismatchError("scene curves are on different grids")
        if self.n <= grid.f:
            raise ConfigError(f"scene needs n > f (n={self.n}, f={grid.f})")
        if np.any(self.efficiency.values <= 0):
            raise ConfigError("grating efficiency must be strictly positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @property
    def grid(self) -> SpectralGrid:
        return self.illuminant.grid

    @property
    def pixels(self) -> np.ndarray:
        return np.arange(self.n, dtype=float)

    def weight_matrix(self) -> WeightMatrix:
        return build_weight_matrix(self.mapping, self.pixels, self.grid)


@dataclass(frozen=True)
class GratingGeometry:
    """Transmission grating in front of a pinhole camera.

    Lengths in metres; ``focal_px`` and ``center_px`` in pixels.
    """

    slit_pitch: float = 2.0e-6
    order: int = 1
    center: tuple[float, float, float] = (0.0, 0.0, 0.05)
    focal_px: float = 3000.0
    center_px: float = 0.0
    slit_count: int = 1250

    def __post_init__(self):
        if self.slit_pitch <= 0:
            raise ConfigError("slit pitch must be positive")
        if self.order not in (-1, 1):
            raise ConfigError("only first-order (k = +/-1) diffraction is modelled")
        if self.center[2] <= 0:
            raise ConfigError("grating must sit in front of the camera (s_z > 0)")
        if self.slit_count < 1:
            raise ConfigError("slit count must be >= 1")

    def sin_theta(self, wavelengths_nm) -> np.ndarray:
        return self.order * np.asarray(wavelengths_nm, dtype=float) * 1e-9 / self.slit_pitch

    def pixel_of(self, wavelengths_nm) -> np.ndarray:
        s = self.sin_theta(wavelengths_nm)
        if np.any(np.abs(s) > 1):
            raise NoDiffractionError("k * lambda / d exceeds 1: no diffracted order at these wavelengths")
        sx, _, sz = self.center
        x = sz * np.tan(np.arcsin(s))
        return self.focal_px * (x + sx) / sz + self.center_px

    def wavelength_of(self, pixels) -> np.ndarray:
        sx, _, sz = self.center
        x = (np.asarray(pixels, dtype=float) - self.center_px) * sz / self.focal_px - sx
        theta = np.arctan(x / sz)
        return self.slit_pitch * np.sin(theta) / self.order * 1e9


def _noisy(values: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0:
        return values
    return values * (1.0 + rng.normal(0.0, sigma, size=values.shape))


def render_direct(spec: SceneSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-channel sum of e * s over the grid (light scale fixed to 1)."""
    m = spec.illuminant.values @ spec.sensitivity.as_matrix()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return _noisy(m, spec.noise_sigma, rng)


def render_diffracted(spec: SceneSpec, W: WeightMatrix | np.ndarray,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """n x 3 matrix W diag(e) diag(eta) s."""
    W = W.W if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    if W.shape != (spec.n, spec.grid.f):
        raise GridMismatchError(f"weight matrix is {W.shape}, scene needs ({spec.n}, {spec.grid.f})")
    weighted = (spec.illuminant.values * spec.efficiency.values)[:, None] * spec.sensitivity.as_matrix()
    m = W @ weighted
    if rng is None:
        rng = np.random.default_rng(spec.seed + 1)
    return _noisy(m, spec.noise_sigma, rng)


def render(spec: SceneSpec, W: WeightMatrix | None = None) -> ObservationSet:
    """Render both observations with one seeded noise stream."""
    rng = np.random.default_rng(spec.seed)
    W = spec.weight_matrix() if W is None else W
    m_dir = render_direct(spec, rng)
    m_dif = render_diffracted(spec, W, rng)
    return ObservationSet(m_dir, m_dif, spec.pixels)


@dataclass(frozen=True)
class PhysicalMapping:
    mapping: PixelToWavelengthMap
    max_fit_residual: float
    sin_range: tuple[float, float]
    pixel_range: tuple[float, float]


def physical_mapping(geom: GratingGeometry, grid: SpectralGrid, n: int = 200) -> PhysicalMapping:
    """Quadratic fit of the exact grating-equation + pinhole mapping over the grid's range.

    The fit uses ``n`` evenly spaced pixels between the images of lambda_min and lambda_max;
    the returned map is in absolute pixel coordinates.
    """
    ends = geom.pixel_of([grid.lambda_min, grid.lambda_max])
    pixels = np.linspace(ends[0], ends[1], n)
    lam = geom.wavelength_of(pixels)
    mapping = fit_quadratic(pixels, lam)
    resid = float(np.max(np.abs(mapping(pixels) - lam)))
    s = geom.sin_theta([grid.lambda_min, grid.lambda_max])
    return PhysicalMapping(mapping, resid, (float(s[0]), float(s[1])),
                           (float(ends[0]), float(ends[1])))


def random_mapping(grid: SpectralGrid, n: int, seed: int, margin: float = 0.08,
                   max_bend: float = 0.3) -> PixelToWavelengthMap:
    """Random increasing quadratic over pixels 0..n-1 whose image covers the grid.

    The ends overshoot the grid by up to ``margin`` of its span; ``max_bend`` bounds
    the midpoint deviation from linear as a fraction of the safe (monotone) range.
    """
    if n <= grid.f:
        raise ConfigError(f"mapping needs n > f (n={n}, f={grid.f})")
    rng = np.random.default_rng(seed)
    last = n - 1
    while True:
        lo = grid.lambda_min - rng.uniform(0, margin) * grid.span
        hi = grid.lambda_max + rng.uniform(0, margin) * grid.span
        # midpoint offset of a quadratic through (0, lo), (last, hi); |bend| < 1/4 of the
        # rise keeps it monotone
        bend = rng.uniform(-max_bend, max_bend) * (hi - lo) / 4
        a = -4 * bend / last**2
        b = (hi - lo) / last - a * last
        mapping = PixelToWavelengthMap(a, b, lo)
        if mapping.is_monotone([0, last]) and mapping.covers([0, last], grid):
            return mapping


def linear_mapping(grid: SpectralGrid, n: int, lo: float | None = None,
                   hi: float | None = None) -> PixelToWavelengthMap:
    lo = grid.lambda_min if lo is None else lo
    hi = grid.lambda_max if hi is None else hi
    return PixelToWavelengthMap(0.0, (hi - lo) / (n - 1), lo)


def synth_efficiency(basis: BasisModel, seed: int, inverse: bool = False,
                     harmonic_scale: float = 0.08) -> SpectralCurve:
    """Smooth random grating efficiency with values in (0.1, 1].

    With ``inverse=False`` the efficiency itself is B c; with ``inverse=True`` its
    reciprocal is B c instead.
    """
    if basis.kind != FOURIER_EFFICIENCY:
        raise ConfigError("efficiencies are drawn from a Fourier basis")
    rng = np.random.default_rng(seed)
    while True:
        level = rng.uniform(0.5, 0.85)
        c = np.zeros(basis.b)
        c[1:] = rng.uniform(-1, 1, basis.b - 1) * harmonic_scale / np.ceil(np.arange(1, basis.b) / 2)
        if inverse:
            c_inv = np.concatenate([[1.0 / level], c[1:] / level])
            eta = 1.0 / (basis.B @ c_inv)
        else:
            c[0] = level
            eta = basis.B @ c
        if np.all(eta > 0.1) and np.all(eta <= 1.0):
            return SpectralCurve(basis.grid, eta)


@dataclass(frozen=True)
class ResolvanceReport:
    delta_lambda: float
    grid_step: float
    resolvance_ok: bool
    pixels_ok: bool
    n: int
    f: int

    @property
    def ok(self) -> bool:
        return self.resolvance_ok and self.pixels_ok

    def lines(self) -> list[str]:
        mark = {True: "PASS", False: "FAIL"}
        return [
            f"[{mark[self.resolvance_ok]}] grating resolvance {self.delta_lambda:.3g} nm "
            f"<= grid step {self.grid_step:.3g} nm",
            f"[{mark[self.pixels_ok]}] diffracted span n={self.n} >= f={self.f}",
        ]


def check_resolvance(geom: GratingGeometry, grid: SpectralGrid, n: int,
                     lambda_f: float | None = None) -> ResolvanceReport:
    """Rayleigh resolvance of the illuminated slits vs. grid spacing, and pixel coverage."""
    lam_f = grid.lambda_max if lambda_f is None else lambda_f
    delta = lam_f / geom.slit_count
    return ResolvanceReport(delta, grid.step, delta <= grid.step, n >= grid.f, n, grid.f)


# ---------------------------------------------------------------------------
# synthetic spectra

def _gauss(wl, mu, sigma):
    return np.exp(-0.5 * ((wl - mu) / sigma) ** 2)


def synth_camera(grid: SpectralGrid, seed: int) -> SensitivityTriplet:
    """Plausible RGB sensitivity built from a few Gaussian lobes per channel."""
    rng = np.random.default_rng(seed)
    wl = grid.wavelengths
    blue = _gauss(wl, rng.uniform(450, 465), rng.uniform(20, 28))
    blue += rng.uniform(0.0, 0.15) * _gauss(wl, rng.uniform(520, 545), rng.uniform(20, 30))
    green = _gauss(wl, rng.uniform(522, 538), rng.uniform(28, 36))
    green += rng.uniform(0.0, 0.2) * _gauss(wl, rng.uniform(470, 490), rng.uniform(15, 25))
    red = _gauss(wl, rng.uniform(592, 612), rng.uniform(22, 32))
    red += rng.uniform(0.0, 0.12) * _gauss(wl, rng.uniform(430, 460), rng.uniform(15, 25))
    # IR-cut roll-off
    cut = 1.0 / (1.0 + np.exp((wl - rng.uniform(640, 670)) / rng.uniform(8, 15)))
    m = np.column_stack([red * cut * rng.uniform(0.6, 0.95), green,
                         blue * rng.uniform(0.6, 0.95)])
    return SensitivityTriplet.from_matrix(grid, m / m.max())


def synth_camera_dataset(grid: SpectralGrid, count: int = 44, seed: int = 0) -> list[SensitivityTriplet]:
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [synth_camera(grid, int(s)) for s in seeds]


def led_illuminant(grid: SpectralGrid, seed: int = 0) -> SpectralCurve:
    """White phosphor LED: narrow blue pump plus a broad phosphor band."""
    rng = np.random.default_rng(seed)
    wl = grid.wavelengths
    e = (rng.uniform(0.5, 0.9) * _gauss(wl, rng.uniform(445, 460), rng.uniform(10, 14))
         + _gauss(wl, rng.uniform(555, 590), rng.uniform(45, 60))
         + 0.05)
    return SpectralCurve(grid, e / e.max())


def fluorescent_illuminant(grid: SpectralGrid, seed: int = 0,
                           lines_nm=(440.0, 460.0, 520.0, 550.0, 600.0, 620.0)) -> SpectralCurve:
    """Spiky lamp: strong lines on grid nodes over a weak smooth continuum.

    The default lines put two lines inside each channel's main response band.
    """
    rng = np.random.default_rng(seed)
    wl = grid.wavelengths
    e = 0.04 + 0.04 * _gauss(wl, 560.0, 80.0)
    for lam in lines_nm:
        j = int(np.argmin(np.abs(wl - lam)))
        e[j] += rng.uniform(0.8, 1.0)
    return SpectralCurve(grid, e / e.max())


def flat_illuminant(grid: SpectralGrid) -> SpectralCurve:
    return SpectralCurve(grid, np.ones(grid.f))
