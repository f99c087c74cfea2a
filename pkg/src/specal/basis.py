"""Basis matrices for sensitivities (per-channel SVD) and grating efficiency (Fourier)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    DataError,
    GridMismatchError,
    RankError,
    SensitivityTriplet,
    SpectralCurve,
    SpectralGrid,
    _readonly,
)

SVD_SENSITIVITY = "svd-sensitivity"
FOURIER_EFFICIENCY = "fourier-efficiency"


@dataclass(frozen=True, eq=False)
class BasisModel:
    grid: SpectralGrid
    B: np.ndarray
    kind: str

    def __post_init__(self):
        B = _readonly(self.B)
        if B.ndim != 2 or B.shape[0] != self.grid.f:
            raise GridMismatchError(f"basis must have {self.grid.f} rows, got shape {B.shape}")
        if B.shape[1] > self.grid.f:
            raise RankError(f"basis has more columns ({B.shape[1]}) than wavelengths")
        object.__setattr__(self, "B", B)

    @property
    def b(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    c: np.ndarray
    basis: BasisModel

    def __post_init__(self):
        c = _readonly(self.c)
        if c.shape != (self.basis.b,):
            raise DataError(f"expected {self.basis.b} coefficients, got shape {c.shape}")
        object.__setattr__(self, "c", c)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def build_svd_basis(dataset: Sequence[SpectralCurve], b_s: int,
                    rank_tol: float = 1e-10) -> BasisModel:
    """Leading ``b_s`` left singular vectors of the (uncentered) f x N data matrix.

    Each column is flipped so that its largest-magnitude entry is positive.
    """
    if len(dataset) == 0:
        raise DataError("empty sensitivity dataset")
    grid = dataset[0].grid
    if any(curve.grid != grid for curve in dataset):
        raise GridMismatchError("dataset curves are on different grids")
    if not 1 <= b_s <= grid.f:
        raise RankError(f"basis size must be in [1, {grid.f}], got {b_s}")
    if b_s > len(dataset):
        raise RankError(f"basis size {b_s} exceeds dataset size {len(dataset)}")
    data = np.column_stack([curve.values for curve in dataset])
    U, sv, _ = np.linalg.svd(data, full_matrices=False)
    rank = int(np.sum(sv > rank_tol * max(sv[0], np.finfo(float).tiny)))
    if b_s > rank:
        raise RankError(f"requested {b_s} basis vectors but data has rank {rank}")
    return BasisModel(grid, _fix_signs(U[:, :b_s]), SVD_SENSITIVITY)


def build_channel_bases(dataset: Sequence[SensitivityTriplet], b_s: int) -> tuple[BasisModel, ...]:
    """One SVD basis per colour channel."""
    return tuple(build_svd_basis([cam.channels[k] for cam in dataset], b_s) for k in range(3))


def fourier_basis(grid: SpectralGrid, t: int) -> BasisModel:
    """Low-frequency Fourier basis on ``grid`` with ``t`` columns.

    Column 0 is constant. Column k >= 1 uses harmonic h = ceil(k / 2): cosine for odd k,
    sine for even k, evaluated at lambda / (lambda_max - lambda_min).
    """
    if t < 1:
        raise RankError(f"Fourier basis needs t >= 1, got {t}")
    if t > grid.f:
        raise RankError(f"Fourier basis size {t} exceeds grid size {grid.f}")
    phase = 2 * np.pi * grid.wavelengths / grid.span
    cols = [np.ones(grid.f)]
    for k in range(1, t):
        h = math.ceil(k / 2)
        cols.append(np.cos(h * phase) if k % 2 else np.sin(h * phase))
    return BasisModel(grid, np.column_stack(cols), FOURIER_EFFICIENCY)


def reconstruct(coeffs: CoefficientVector) -> SpectralCurve:
    return SpectralCurve(coeffs.basis.grid, coeffs.basis.B @ coeffs.c)


def project(curve: SpectralCurve, basis: BasisModel) -> CoefficientVector:
    """Least-squares coefficients of ``curve`` in ``basis``."""
    if curve.grid != basis.grid:
        raise GridMismatchError("curve and basis are on different grids")
    c, _, rank, _ = np.linalg.lstsq(basis.B, curve.values, rcond=None)
    if rank < basis.b:
        raise RankError(f"basis is rank deficient ({rank} < {basis.b})")
    return CoefficientVector(c, basis)


def project_triplet(triplet: SensitivityTriplet, bases: Sequence[BasisModel]) -> SensitivityTriplet:
    """Replace each channel by its orthogonal projection onto the matching basis."""
    return SensitivityTriplet(*(
        reconstruct(project(ch, basis)) for ch, basis in zip(triplet.channels, bases)))


def mean_sensitivity(dataset: Sequence[SensitivityTriplet]) -> SensitivityTriplet:
    if len(dataset) == 0:
        raise DataError("cannot average an empty dataset")
    grid = dataset[0].grid
    if any(cam.grid != grid for cam in dataset):
        raise GridMismatchError("dataset triplets are on different grids")
    mean = np.mean([cam.as_matrix() for cam in dataset], axis=0)
    return SensitivityTriplet.from_matrix(grid, mean)
