"""Closed-form joint estimate of camera sensitivity and grating efficiency.

Unknowns are x = [c_eta; c_sR; c_sG; c_sB], with s_c = B_s(c) c_s(c) and 1/eta = B_eta c_eta.
The diffracted profile gives the homogeneous rows A_dif x = 0 and the direct light fixes
the scale through [0 A_dir] x = m_dir. The equality-constrained least squares problem is
solved through its KKT system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .basis import BasisModel
from .core import (
    ConditionError,
    ConfigError,
    DataError,
    GridMismatchError,
    ObservationSet,
    RankError,
    SensitivityTriplet,
    SpectralCurve,
)
from .mapping import WeightMatrix

log = logging.getLogger(__name__)


def basis_budget_ok(f: int, b_eta: int, b_s: int) -> bool:
    """Whether 3f diffracted equations can determine b_eta + 3 b_s unknowns."""
    return 3 * f >= b_eta + 3 * b_s


@dataclass(frozen=True, eq=False)
class CalibrationProblem:
    obs: ObservationSet
    W: WeightMatrix
    illuminant: SpectralCurve
    B_s: tuple[BasisModel, BasisModel, BasisModel]
    B_eta: BasisModel

    def __post_init__(self):
        grid = self.illuminant.grid
        object.__setattr__(self, "B_s", tuple(self.B_s))
        if len(self.B_s) != 3:
            raise ConfigError("need one sensitivity basis per channel")
        if any(B.grid != grid for B in self.B_s) or self.B_eta.grid != grid:
            raise GridMismatchError("bases and illuminant are on different grids")
        if len({B.b for B in self.B_s}) != 1:
            raise ConfigError("channel bases must have equal size")
        if not basis_budget_ok(grid.f, self.B_eta.b, self.b_s):
            raise ConfigError(
                f"3f >= b_eta + 3 b_s violated: 3*{grid.f} < {self.B_eta.b} + 3*{self.b_s}")
        if np.any(self.illuminant.values <= 0):
            bad = grid.wavelengths[self.illuminant.values <= 0]
            raise DataError(
                f"illuminant must be positive on the whole grid; zero/negative at {bad.tolist()} nm")
        if self.W.f != grid.f or self.W.n != self.obs.n:
            raise GridMismatchError(
                f"weight matrix {self.W.W.shape} does not match n={self.obs.n}, f={grid.f}")

    @property
    def grid(self):
        return self.illuminant.grid

    @property
    def b_s(self) -> int:
        return self.B_s[0].b

    @property
    def b_eta(self) -> int:
        return self.B_eta.b

    @property
    def size(self) -> int:
        return self.b_eta + 3 * self.b_s


def assemble_direct(problem: CalibrationProblem) -> tuple[np.ndarray, np.ndarray]:
    """Block-diagonal 3 x 3b_s matrix with rows e^T B_s(c), and the rhs m_dir."""
    e = problem.illuminant.values
    return scipy.linalg.block_diag(*(e @ B.B for B in problem.B_s)), np.array(problem.obs.m_dir)


def spectral_ratio(problem: CalibrationProblem) -> np.ndarray:
    """f x 3 matrix a_(c) = (W^+ m_dif(c)) / e, via a least-squares solve per channel."""
    W = problem.W.W
    rank = problem.W.column_rank()
    if rank < problem.grid.f:
        raise RankError(
            f"weight matrix is column-rank deficient by {problem.grid.f - rank}; "
            "the diffracted pixels do not span the wavelength grid")
    y, *_ = np.linalg.lstsq(W, problem.obs.m_dif, rcond=None)
    return y / problem.illuminant.values[:, None]


def assemble_diffracted(problem: CalibrationProblem, ratio: np.ndarray | None = None) -> np.ndarray:
    """3f x (b_eta + 3b_s) matrix stacking [diag(a_c) B_eta, -B_s(c)] per channel."""
    a = spectral_ratio(problem) if ratio is None else ratio
    f, b_eta, b_s = problem.grid.f, problem.b_eta, problem.b_s
    A = np.zeros((3 * f, problem.size))
    for k, B in enumerate(problem.B_s):
        rows = slice(k * f, (k + 1) * f)
        A[rows, :b_eta] = a[:, k, None] * problem.B_eta.B
        A[rows, b_eta + k * b_s: b_eta + (k + 1) * b_s] = -B.B
    return A


def kkt_system(A_dif: np.ndarray, C: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """KKT matrix and rhs for min ||A_dif x||^2 s.t. C x = d."""
    m, k = A_dif.shape[1], C.shape[0]
    K = np.zeros((m + k, m + k))
    K[:m, :m] = 2 * A_dif.T @ A_dif
    K[:m, m:] = C.T
    K[m:, :m] = C
    return K, np.concatenate([np.zeros(m), d])


@dataclass
class Diagnostics:
    constraint_residual: float
    objective: float
    stationarity: float
    condition_number: float
    kkt_size: int
    negative_inverse_efficiency_nm: list = field(default_factory=list)
    negative_sensitivity: bool = False

    def to_dict(self) -> dict:
        return {
            "constraint_residual": self.constraint_residual,
            "objective": self.objective,
            "stationarity": self.stationarity,
            "condition_number": self.condition_number,
            "kkt_size": self.kkt_size,
            "negative_inverse_efficiency_nm": list(self.negative_inverse_efficiency_nm),
            "negative_sensitivity": self.negative_sensitivity,
        }


@dataclass(frozen=True, eq=False)
class CalibrationSolution:
    """Solver output.

    ``sensitivity`` and ``efficiency`` are each normalized to a maximum of 1;
    ``sensitivity_scale`` restores the absolute sensitivity implied by m_dir.
    ``coeffs`` and ``multiplier`` are the raw KKT solution.
    """

    sensitivity: SensitivityTriplet
    efficiency: SpectralCurve
    coeffs: np.ndarray
    multiplier: np.ndarray
    diagnostics: Diagnostics
    sensitivity_scale: float
    inverse_efficiency: SpectralCurve

    def raw_sensitivity(self) -> SensitivityTriplet:
        return self.sensitivity.scaled(self.sensitivity_scale)


def split_coeffs(problem: CalibrationProblem, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    b_eta, b_s = problem.b_eta, problem.b_s
    return x[:b_eta], [x[b_eta + k * b_s: b_eta + (k + 1) * b_s] for k in range(3)]


def solve(problem: CalibrationProblem, cond_limit: float = 1e14) -> CalibrationSolution:
    A_dir, m_dir = assemble_direct(problem)
    A_dif = assemble_diffracted(problem)
    C = np.hstack([np.zeros((3, problem.b_eta)), A_dir])
    K, rhs = kkt_system(A_dif, C, m_dir)

    cond = float(np.linalg.cond(K))
    if not np.isfinite(cond) or cond > cond_limit:
        rank = int(np.linalg.matrix_rank(K))
        raise ConditionError(
            f"KKT matrix is singular or ill-conditioned (cond={cond:.3g}, rank {rank} of {K.shape[0]})")
    lu = scipy.linalg.lu_factor(K)
    sol = scipy.linalg.lu_solve(lu, rhs)
    m = problem.size
    x, mu = sol[:m], sol[m:]

    grad = 2 * A_dif.T @ (A_dif @ x) + C.T @ mu
    grad_scale = np.linalg.norm(2 * A_dif.T @ A_dif, ord=np.inf) * np.max(np.abs(x)) + np.max(np.abs(C.T @ mu))
    constraint = np.max(np.abs(C @ x - m_dir)) / max(np.max(np.abs(m_dir)), 1e-300)
    objective = float(np.sum((A_dif @ x) ** 2))

    c_eta, c_s = split_coeffs(problem, x)
    grid = problem.grid
    s = np.column_stack([B.B @ c for B, c in zip(problem.B_s, c_s)])
    inv_eta = problem.B_eta.B @ c_eta
    bad = grid.wavelengths[inv_eta <= 0]
    if bad.size:
        log.warning("inverse efficiency is non-positive at %s nm", bad.tolist())
    with np.errstate(divide="ignore"):
        eta = np.where(inv_eta > 0, 1.0 / np.where(inv_eta > 0, inv_eta, 1.0), 0.0)
    eta_peak = eta.max() if eta.max() > 0 else 1.0

    peak = float(np.max(s))
    if peak <= 0:
        raise ConditionError("recovered sensitivity has no positive response")
    diag = Diagnostics(
        constraint_residual=float(constraint),
        objective=objective,
        stationarity=float(np.max(np.abs(grad)) / max(grad_scale, 1e-300)),
        condition_number=cond,
        kkt_size=K.shape[0],
        negative_inverse_efficiency_nm=bad.tolist(),
        negative_sensitivity=bool(np.any(s < 0)),
    )
    return CalibrationSolution(
        sensitivity=SensitivityTriplet.from_matrix(grid, s / peak),
        efficiency=SpectralCurve(grid, eta / eta_peak),
        coeffs=x,
        multiplier=mu,
        diagnostics=diag,
        sensitivity_scale=peak,
        inverse_efficiency=SpectralCurve(grid, inv_eta),
    )


def calibrate(obs: ObservationSet, W: WeightMatrix, illuminant: SpectralCurve,
              B_s: Sequence[BasisModel], B_eta: BasisModel) -> CalibrationSolution:
    return solve(CalibrationProblem(obs, W, illuminant, tuple(B_s), B_eta))
