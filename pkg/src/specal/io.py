"""File formats.

Curves        ``wavelength_nm,value``           one row per wavelength
Triplets      ``wavelength_nm,r,g,b``
Diffracted    ``pixel,r,g,b``                   one row per pixel
Direct        ``r,g,b`` header + one data row   (a bare 3-value row is also accepted)
Bases         ``wavelength_nm,<ch>_0,...``      one column per basis vector; ``<ch>`` is
              r/g/b for per-channel sensitivity bases or ``eta`` for an efficiency basis
Maps          JSON ``{"a", "b", "c", "origin", ...}``
Solutions     JSON, see :func:`solution_to_dict`

Floats are written with ``repr`` so files round-trip exactly and are byte-stable.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .basis import FOURIER_EFFICIENCY, SVD_SENSITIVITY, BasisModel, fourier_basis
from .core import (
    CHANNELS,
    ConfigError,
    DataError,
    ObservationSet,
    SensitivityTriplet,
    SpectralCurve,
    SpectralGrid,
    resample_samples,
)
from .mapping import PixelToWavelengthMap


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def _read_table(path, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if row.strip() and not row.startswith("#"))
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        fields = [name.strip() for name in reader.fieldnames]
        missing = [c for c in required if c not in fields]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}; found {fields}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    try:
        return {name.strip(): np.array([float(r[name]) for r in rows]) for name in reader.fieldnames}
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from None


def write_columns(path, columns: dict) -> Path:
    """Equal-length named columns as CSV."""
    return atomic_write(path, _csv_text(list(columns), zip(*columns.values())))


# ---------------------------------------------------------------------------
# curves

def read_curve(path, grid: SpectralGrid | None = None) -> SpectralCurve:
    """Load ``wavelength_nm,value``; resample onto ``grid`` when given."""
    t = _read_table(path, ("wavelength_nm", "value"))
    if grid is None:
        return SpectralCurve(SpectralGrid.from_wavelengths(t["wavelength_nm"]), t["value"])
    return resample_samples(t["wavelength_nm"], t["value"], grid)


def write_curve(path, curve: SpectralCurve) -> Path:
    rows = zip(curve.grid.wavelengths, curve.values)
    return atomic_write(path, _csv_text(("wavelength_nm", "value"), rows))


def read_triplet(path, grid: SpectralGrid | None = None) -> SensitivityTriplet:
    t = _read_table(path, ("wavelength_nm",) + CHANNELS)
    if grid is None:
        grid = SpectralGrid.from_wavelengths(t["wavelength_nm"])
        return SensitivityTriplet(*(SpectralCurve(grid, t[c]) for c in CHANNELS))
    return SensitivityTriplet(*(resample_samples(t["wavelength_nm"], t[c], grid) for c in CHANNELS))


def write_triplet(path, triplet: SensitivityTriplet, extra: dict | None = None) -> Path:
    """Write a triplet; ``extra`` adds named columns (e.g. ground truth for plotting)."""
    header = ["wavelength_nm", *CHANNELS]
    cols = [triplet.grid.wavelengths, *(c.values for c in triplet.channels)]
    for name, values in (extra or {}).items():
        header.append(name)
        cols.append(np.asarray(values, dtype=float))
    return atomic_write(path, _csv_text(header, zip(*cols)))


def read_dataset(directory, grid: SpectralGrid | None = None) -> list[SensitivityTriplet]:
    """All ``*.csv`` triplets in ``directory``, in filename order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"dataset directory not found: {directory}")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"no CSV files in {directory}")
    cams = [read_triplet(p, grid) for p in files]
    grid = cams[0].grid
    if any(c.grid != grid for c in cams):
        raise DataError(f"dataset {directory} mixes wavelength grids; pass a target grid")
    return cams


def write_dataset(directory, cameras: list[SensitivityTriplet], prefix: str = "camera") -> list[Path]:
    directory = Path(directory)
    width = max(2, len(str(len(cameras) - 1)))
    return [write_triplet(directory / f"{prefix}_{i:0{width}d}.csv", cam) for i, cam in enumerate(cameras)]


# ---------------------------------------------------------------------------
# observations

def write_diffracted(path, m_dif, pixels) -> Path:
    rows = ([p, *row] for p, row in zip(pixels, np.asarray(m_dif)))
    return atomic_write(path, _csv_text(("pixel", *CHANNELS), rows))


def read_diffracted(path) -> tuple[np.ndarray, np.ndarray]:
    t = _read_table(path, ("pixel",) + CHANNELS)
    return np.column_stack([t[c] for c in CHANNELS]), t["pixel"]


def write_direct(path, m_dir) -> Path:
    return atomic_write(path, _csv_text(CHANNELS, [list(m_dir)]))


def read_direct(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    rows = [r for r in csv.reader(path.read_text().splitlines()) if r and not r[0].startswith("#")]
    if rows and [c.strip().lower() for c in rows[0]] == list(CHANNELS):
        rows = rows[1:]
    if len(rows) != 1 or len(rows[0]) != 3:
        raise DataError(f"{path}: expected a single row of 3 direct intensities")
    try:
        return np.array([float(v) for v in rows[0]])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def read_observations(obs_dir, dif_name: str = "dif.csv", dir_name: str = "dir.csv") -> ObservationSet:
    obs_dir = Path(obs_dir)
    m_dif, pixels = read_diffracted(obs_dir / dif_name)
    return ObservationSet(read_direct(obs_dir / dir_name), m_dif, pixels)


def write_observations(obs_dir, obs: ObservationSet, dif_name: str = "dif.csv",
                       dir_name: str = "dir.csv") -> None:
    obs_dir = Path(obs_dir)
    write_diffracted(obs_dir / dif_name, obs.m_dif, obs.pixel_positions)
    write_direct(obs_dir / dir_name, obs.m_dir)


# ---------------------------------------------------------------------------
# bases

def write_bases(path, bases: dict[str, BasisModel]) -> Path:
    """Write named bases sharing one grid as columns ``<name>_<k>``."""
    grids = {b.grid for b in bases.values()}
    if len(grids) != 1:
        raise DataError("bases written together must share a grid")
    grid = grids.pop()
    header = ["wavelength_nm"]
    cols = [grid.wavelengths]
    for name, basis in bases.items():
        for k in range(basis.b):
            header.append(f"{name}_{k}")
            cols.append(basis.B[:, k])
    return atomic_write(path, _csv_text(header, zip(*cols)))


def read_bases(path) -> dict[str, BasisModel]:
    t = _read_table(path, ("wavelength_nm",))
    grid = SpectralGrid.from_wavelengths(t["wavelength_nm"])
    groups: dict[str, list[tuple[int, np.ndarray]]] = {}
    for col, values in t.items():
        if col == "wavelength_nm":
            continue
        name, _, k = col.rpartition("_")
        if not name or not k.isdigit():
            raise DataError(f"{path}: unexpected basis column {col!r}")
        groups.setdefault(name, []).append((int(k), values))
    out = {}
    for name, cols in groups.items():
        cols.sort(key=lambda kv: kv[0])
        kind = FOURIER_EFFICIENCY if name == "eta" else SVD_SENSITIVITY
        out[name] = BasisModel(grid, np.column_stack([v for _, v in cols]), kind)
    return out


def parse_eta_basis(spec: str, grid: SpectralGrid) -> BasisModel:
    """``fourier:<t>`` or a path to a basis CSV holding an ``eta`` group."""
    if spec.startswith("fourier:"):
        try:
            t = int(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad Fourier basis spec {spec!r}") from None
        return fourier_basis(grid, t)
    bases = read_bases(spec)
    if "eta" not in bases:
        raise ConfigError(f"{spec}: no 'eta' basis columns")
    return bases["eta"]


# ---------------------------------------------------------------------------
# maps and solutions

def write_map(path, mapping: PixelToWavelengthMap, **meta) -> Path:
    return atomic_write(path, dump_json({**mapping.to_dict(), **meta}))


def read_map(path) -> PixelToWavelengthMap:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return PixelToWavelengthMap.from_dict(json.loads(path.read_text()))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: not a mapping file ({exc})") from None


def grid_to_dict(grid: SpectralGrid) -> dict:
    return {"lambda_min": grid.lambda_min, "lambda_max": grid.lambda_max, "f": grid.f}


def grid_from_dict(d: dict) -> SpectralGrid:
    return SpectralGrid(float(d["lambda_min"]), float(d["lambda_max"]), int(d["f"]))


def solution_to_dict(sol) -> dict:
    s = sol.sensitivity
    return {
        "grid": grid_to_dict(s.grid),
        "sensitivity": {c: ch.values.tolist() for c, ch in zip(CHANNELS, s.channels)},
        "sensitivity_scale": sol.sensitivity_scale,
        "efficiency": sol.efficiency.values.tolist(),
        "inverse_efficiency": sol.inverse_efficiency.values.tolist(),
        "coeffs": sol.coeffs.tolist(),
        "multiplier": sol.multiplier.tolist(),
        "diagnostics": sol.diagnostics.to_dict(),
    }


def write_solution(path, sol, **meta) -> Path:
    return atomic_write(path, dump_json({**solution_to_dict(sol), **meta}))


def read_solution_curves(path) -> tuple[SensitivityTriplet, SpectralCurve]:
    """Normalized sensitivity and efficiency stored in a solution file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    d = json.loads(path.read_text())
    grid = grid_from_dict(d["grid"])
    sens = SensitivityTriplet(*(SpectralCurve(grid, d["sensitivity"][c]) for c in CHANNELS))
    return sens, SpectralCurve(grid, d["efficiency"])
