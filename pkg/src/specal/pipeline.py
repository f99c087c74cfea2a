"""simulate -> map -> calibrate -> eval, driven by a JSON manifest.

Manifest keys (all optional except ``out_dir`` and ``scenes``)::

    {
      "grid": {"lambda_min": 400, "lambda_max": 700, "f": 31},
      "basis": {"dataset": "synthetic" | DIR, "dataset_size": 44, "dataset_seed": 0,
                "b_s": 7, "b_eta": 7},
      "grating": {"lines_per_mm": 500, "width_mm": 2.5},
      "n": 1000,
      "mapping_mode": "peaks" | "icp" | "truth",
      "icp_iterations": 500,
      "noise_sigma": 0.0,
      "seed": 0,
      "jobs": 1,
      "out_dir": "runs/demo",
      "scenes": [
        {"name": "s0", "illuminant": "led", "seed": 3, "mapping": "random",
         "map_illuminant": "fluorescent", "in_span": true},
        {"name": "lab", "obs_dir": "captures/lab", "illuminant": "lamp.csv",
         "map_obs": "captures/lab/flu_dif.csv", "map_illuminant": "flu.csv"}
      ]
    }

A scene with ``obs_dir`` is ingested (``dif.csv`` + ``dir.csv``) instead of simulated and is
only evaluated when it carries a ``truth`` triplet CSV. Relative paths resolve against the
manifest's directory. ``SPECAL_SEED`` replaces ``seed``; scenes without their own seed use
``seed + index``.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import io as sio
from .core import ConfigError, DataError, SpecalError, SpectralGrid
from .forward import GratingGeometry, check_resolvance
from .mapping import build_weight_matrix, estimate_map_icp, estimate_map_peaks, mapping_re
from .metrics import EvaluationReport, efficiency_cosine, emit_report, sensitivity_re
from .scenes import BasisSetup, make_scene, write_scene
from .solver import basis_budget_ok, calibrate

log = logging.getLogger(__name__)

MAPPING_MODES = ("peaks", "icp", "truth")
SEED_ENV = "SPECAL_SEED"
_BUILTIN_ILLUMINANTS = ("led", "fluorescent", "flat")


class StageError(SpecalError):
    """A module error tagged with the pipeline stage and operation that raised it."""

    def __init__(self, scene: str, module: str, op: str, cause: SpecalError):
        super().__init__(f"{scene}: {module}.{op}: {cause}")
        self.scene, self.module, self.op, self.cause = scene, module, op, cause
        self.exit_code = cause.exit_code

    def record(self) -> dict:
        return {"scene": self.scene, "module": self.module, "op": self.op,
                "error": type(self.cause).__name__, "message": str(self.cause),
                "exit_code": self.exit_code}


@dataclass(frozen=True)
class SceneConfig:
    name: str
    seed: int | None = None
    illuminant: str = "led"
    mapping: str | dict = "random"
    map_illuminant: str | None = None
    in_span: bool = True
    eta_form: str = "inverse"
    noise_sigma: float | None = None
    obs_dir: str | None = None
    map_obs: str | None = None
    truth: str | None = None

    @property
    def simulated(self) -> bool:
        return self.obs_dir is None


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: str
    scenes: tuple[SceneConfig, ...]
    grid: SpectralGrid = SpectralGrid()
    dataset: str = "synthetic"
    dataset_size: int = 44
    dataset_seed: int = 0
    b_s: int = 7
    b_eta: int = 7
    lines_per_mm: float = 500.0
    width_mm: float = 2.5
    n: int = 1000
    mapping_mode: str = "peaks"
    icp_iterations: int = 500
    noise_sigma: float = 0.0
    seed: int = 0
    jobs: int = 1
    base_dir: str = field(default=".", compare=False)

    @property
    def slit_count(self) -> int:
        return int(round(self.lines_per_mm * self.width_mm))

    @property
    def basis_setup(self) -> BasisSetup:
        return BasisSetup(self.grid, self.dataset, self.dataset_size, self.dataset_seed, self.b_s, self.b_eta)

    def scene_seed(self, index: int) -> int:
        s = self.scenes[index].seed
        return self.seed + index if s is None else s

    def resolve(self, path: str | None) -> str | None:
        if path is None or path in _BUILTIN_ILLUMINANTS or path == "synthetic":
            return path
        p = Path(path)
        return str(p if p.is_absolute() else Path(self.base_dir) / p)


def _take(d: dict, key: str, cast, default):
    if key not in d:
        return default
    try:
        return cast(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {d[key]!r}") from None


def config_from_dict(d: dict, base_dir=".", env=None) -> PipelineConfig:
    env = os.environ if env is None else env
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - {"grid", "basis", "grating", "n", "mapping_mode", "icp_iterations",
                        "noise_sigma", "seed", "jobs", "out_dir", "scenes"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        grid = sio.grid_from_dict({**sio.grid_to_dict(SpectralGrid()), **d.get("grid", {})})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid spec: {exc}") from None
    basis = d.get("basis", {})
    grating = d.get("grating", {})
    scenes = []
    for i, s in enumerate(d.get("scenes", [])):
        if not isinstance(s, dict):
            raise ConfigError(f"scene {i} must be an object")
        try:
            scenes.append(SceneConfig(**{"name": f"scene_{i:02d}", **s}))
        except TypeError as exc:
            raise ConfigError(f"scene {i}: {exc}") from None
    seed = _take(d, "seed", int, 0)
    if env.get(SEED_ENV):
        seed = _take(env, SEED_ENV, int, seed)
    if "out_dir" not in d:
        raise ConfigError("config needs an out_dir")
    return PipelineConfig(
        out_dir=str(Path(base_dir) / d["out_dir"]) if not Path(d["out_dir"]).is_absolute() else d["out_dir"],
        scenes=tuple(scenes),
        grid=grid,
        dataset=_take(basis, "dataset", str, "synthetic"),
        dataset_size=_take(basis, "dataset_size", int, 44),
        dataset_seed=_take(basis, "dataset_seed", int, 0),
        b_s=_take(basis, "b_s", int, 7),
        b_eta=_take(basis, "b_eta", int, 7),
        lines_per_mm=_take(grating, "lines_per_mm", float, 500.0),
        width_mm=_take(grating, "width_mm", float, 2.5),
        n=_take(d, "n", int, 1000),
        mapping_mode=_take(d, "mapping_mode", str, "peaks"),
        icp_iterations=_take(d, "icp_iterations", int, 500),
        noise_sigma=_take(d, "noise_sigma", float, 0.0),
        seed=seed,
        jobs=_take(d, "jobs", int, 1),
        base_dir=str(base_dir),
    )


def load_config(path, env=None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(d, path.parent, env)


# ---------------------------------------------------------------------------
# preflight

@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.ok]

    def lines(self) -> list[str]:
        return [f"[{'PASS' if c.ok else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks]


def _file_checks(cfg: PipelineConfig) -> list[Check]:
    out = []
    if cfg.dataset != "synthetic":
        p = cfg.resolve(cfg.dataset)
        out.append(Check("dataset", Path(p).is_dir(), p))
    for sc in cfg.scenes:
        paths = [cfg.resolve(sc.illuminant), cfg.resolve(sc.map_illuminant), cfg.resolve(sc.map_obs),
                 cfg.resolve(sc.truth)]
        if sc.obs_dir is not None:
            d = Path(cfg.resolve(sc.obs_dir))
            paths += [str(d / "dif.csv"), str(d / "dir.csv")]
        for p in paths:
            if p is None or p in _BUILTIN_ILLUMINANTS:
                continue
            out.append(Check(f"{sc.name} file", Path(p).is_file(), p))
    return out


def validate_setup(cfg: PipelineConfig) -> ValidationReport:
    """Preflight: grating resolvance, pixel count, basis budget, and referenced files.

    Never raises; every problem becomes a failed check.
    """
    grid = cfg.grid
    checks = []
    geom = GratingGeometry(slit_pitch=1e-3 / cfg.lines_per_mm if cfg.lines_per_mm > 0 else 1.0,
                           slit_count=max(cfg.slit_count, 1))
    res = check_resolvance(geom, grid, cfg.n)
    checks.append(Check("resolvance", res.resolvance_ok and cfg.slit_count >= 1,
                        f"lambda_f/N = {grid.lambda_max:g}/{cfg.slit_count} = {res.delta_lambda:.3g} nm "
                        f"<= grid step {grid.step:.3g} nm"))
    checks.append(Check("pixels", res.pixels_ok, f"n = {cfg.n} >= f = {grid.f}"))
    checks.append(Check("basis budget", basis_budget_ok(grid.f, cfg.b_eta, cfg.b_s),
                        f"3f = {3 * grid.f} >= b_eta + 3 b_s = {cfg.b_eta + 3 * cfg.b_s}"))
    checks.append(Check("basis ranks", cfg.b_s >= 1 and 1 <= cfg.b_eta <= grid.f,
                        f"b_s = {cfg.b_s}, b_eta = {cfg.b_eta}, f = {grid.f}"))
    if cfg.dataset == "synthetic":
        checks.append(Check("dataset size", cfg.b_s <= cfg.dataset_size,
                            f"b_s = {cfg.b_s} <= {cfg.dataset_size} cameras"))
    checks.append(Check("mapping mode", cfg.mapping_mode in MAPPING_MODES,
                        f"{cfg.mapping_mode!r} in {MAPPING_MODES}"))
    checks.append(Check("scenes", len(cfg.scenes) > 0 and len({s.name for s in cfg.scenes}) == len(cfg.scenes),
                        f"{len(cfg.scenes)} scene(s) with unique names"))
    if cfg.mapping_mode == "truth":
        bad = [s.name for s in cfg.scenes if not s.simulated]
        checks.append(Check("truth mapping", not bad, f"needs simulated scenes (ingested: {bad})"))
    checks.append(Check("noise", cfg.noise_sigma >= 0 and all((s.noise_sigma or 0) >= 0 for s in cfg.scenes),
                        f"sigma = {cfg.noise_sigma}"))
    checks.append(Check("jobs", cfg.jobs >= 1, f"jobs = {cfg.jobs}"))
    checks.extend(_file_checks(cfg))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# per-scene work

@dataclass
class SceneResult:
    name: str
    report: EvaluationReport | None


def _stage(scene: str, module: str, op: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except SpecalError as exc:
        raise StageError(scene, module, op, exc) from exc


def _plot_curves(out: Path, sol, truth_s=None, truth_eta=None) -> None:
    extra = {}
    if truth_s is not None:
        t = truth_s.max_normalized()
        extra = {f"{c}_true": ch.values for c, ch in zip("rgb", t.channels)}
    sio.write_triplet(out / "plot_sensitivity.csv", sol.sensitivity, extra)
    grid = sol.efficiency.grid
    cols = {"wavelength_nm": grid.wavelengths, "eta": sol.efficiency.values}
    if truth_eta is not None:
        cols["eta_true"] = truth_eta.values / truth_eta.values.max()
    sio.write_columns(out / "plot_efficiency.csv", cols)


def run_scene(cfg: PipelineConfig, index: int) -> SceneResult:
    sc = cfg.scenes[index]
    name = sc.name
    setup = cfg.basis_setup
    grid = cfg.grid
    out = Path(cfg.out_dir) / name
    seed = cfg.scene_seed(index)
    sigma = cfg.noise_sigma if sc.noise_sigma is None else sc.noise_sigma
    bases = _stage(name, "basis", "build_svd_basis", lambda: setup.sensitivity_bases)
    mean_s = setup.mean_sensitivity

    truth_s = truth_eta = truth_map = None
    if sc.simulated:
        map_illum = sc.map_illuminant
        if map_illum is None and cfg.mapping_mode == "peaks":
            map_illum = "fluorescent"
        scene = _stage(name, "forward-model", "render", make_scene, setup, seed, n=cfg.n,
                       illuminant=cfg.resolve(sc.illuminant), mapping=sc.mapping,
                       map_illuminant=cfg.resolve(map_illum), noise_sigma=sigma, in_span=sc.in_span,
                       eta_form=sc.eta_form)
        write_scene(out, scene, seed=seed, name=name)
        obs, e = scene.obs, scene.spec.illuminant
        map_obs, map_e = scene.map_obs, scene.map_illuminant
        truth_s, truth_eta, truth_map = scene.spec.sensitivity, scene.spec.efficiency, scene.truth_mapping
    else:
        obs = _stage(name, "spectral-core", "read_observations", sio.read_observations, cfg.resolve(sc.obs_dir))
        e = _stage(name, "spectral-core", "read_curve", sio.read_curve, cfg.resolve(sc.illuminant), grid)
        map_obs, map_e = obs, e
        if sc.map_obs is not None:
            m_dif, pix = _stage(name, "spectral-core", "read_diffracted", sio.read_diffracted,
                                cfg.resolve(sc.map_obs))
            map_obs = type(obs)(obs.m_dir, m_dif, pix)
        if sc.map_illuminant is not None:
            map_e = _stage(name, "spectral-core", "read_curve", sio.read_curve,
                           cfg.resolve(sc.map_illuminant), grid)
        if sc.truth is not None:
            truth_s = _stage(name, "spectral-core", "read_triplet", sio.read_triplet, cfg.resolve(sc.truth), grid)
    _stage(name, "spectral-core", "check_against", obs.check_against, grid)

    if cfg.mapping_mode == "truth":
        mapping = truth_map
    elif cfg.mapping_mode == "peaks":
        mapping = _stage(name, "mapping", "estimate_map_peaks", estimate_map_peaks, map_obs, map_e, mean_s)
    else:
        mapping = _stage(name, "mapping", "estimate_map_icp", estimate_map_icp, map_obs, map_e, mean_s,
                         iters=cfg.icp_iterations)
    sio.write_map(out / "map.json", mapping, mode=cfg.mapping_mode)

    W = _stage(name, "mapping", "build_weight_matrix", build_weight_matrix, mapping, obs.pixel_positions, grid)
    sol = _stage(name, "solver", "solve", calibrate, obs, W, e, bases, setup.efficiency_basis)
    sio.write_solution(out / "solution.json", sol, scene=name, seed=seed, mapping_mode=cfg.mapping_mode)
    _plot_curves(out, sol, truth_s, truth_eta)

    if truth_s is None:
        return SceneResult(name, None)
    rep = _stage(name, "metrics", "sensitivity_re", sensitivity_re, sol.sensitivity, truth_s, normalize=True)
    m_re = mapping_re(mapping, truth_map, obs.pixel_positions, grid) if truth_map is not None else None
    cos = efficiency_cosine(sol.efficiency, truth_eta) if truth_eta is not None else None
    return SceneResult(name, replace(rep, mapping_re=m_re, efficiency_cosine=cos,
                                     metadata={"scene": name, "seed": seed}))


def _run_scene_safe(args):
    cfg, index = args
    try:
        return run_scene(cfg, index), None
    except StageError as exc:
        return None, exc.record()
    except SpecalError as exc:
        return None, {"scene": cfg.scenes[index].name, "module": "pipeline", "op": "run_scene",
                      "error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}


@dataclass
class PipelineResult:
    exit_code: int
    reports: list[EvaluationReport]
    errors: list[dict]
    validation: ValidationReport


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Validate, then process every scene; nothing is written when validation fails.

    Scenes are independent and may run in a process pool (``jobs`` > 1); each scene's
    files are written atomically and the report keeps manifest order either way.
    """
    val = validate_setup(cfg)
    if not val.ok:
        return PipelineResult(2, [], [{"module": "cli-pipeline", "op": "validate_setup", "error": "ConfigError",
                                       "message": "; ".join(f"{c.name}: {c.detail}" for c in val.failures),
                                       "exit_code": 2}], val)
    jobs = [(cfg, i) for i in range(len(cfg.scenes))]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_scene_safe, jobs))
    else:
        results = [_run_scene_safe(j) for j in jobs]

    reports = [r.report for r, _ in results if r is not None and r.report is not None]
    errors = [e for _, e in results if e is not None]
    out = Path(cfg.out_dir)
    emit_report(reports, out / "report.csv")
    if errors:
        sio.atomic_write(out / "errors.json", sio.dump_json(errors))
        code = max(e["exit_code"] for e in errors)
    else:
        code = 0
    return PipelineResult(code, reports, errors, val)


def error_record(exc: Exception) -> dict:
    if isinstance(exc, StageError):
        return exc.record()
    code = getattr(exc, "exit_code", 4 if isinstance(exc, (DataError, OSError)) else 1)
    return {"module": "cli-pipeline", "op": "run", "error": type(exc).__name__, "message": str(exc),
            "exit_code": code}


__all__ = [
    "MAPPING_MODES", "PipelineConfig", "PipelineResult", "SceneConfig", "StageError", "ValidationReport",
    "config_from_dict", "error_record", "load_config", "run_pipeline", "run_scene", "validate_setup",
]
