"""Seeded synthetic calibration scenes built from the forward model."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import io as sio
from .basis import BasisModel, build_channel_bases, fourier_basis, mean_sensitivity, project_triplet
from .core import ConfigError, ObservationSet, SensitivityTriplet, SpectralCurve, SpectralGrid
from .forward import (
    SceneSpec,
    flat_illuminant,
    fluorescent_illuminant,
    led_illuminant,
    random_mapping,
    render,
    synth_camera,
    synth_camera_dataset,
    synth_efficiency,
)
from .mapping import PixelToWavelengthMap


@dataclass(frozen=True)
class BasisSetup:
    """Where the sensitivity dataset comes from and how many basis vectors to keep."""

    grid: SpectralGrid = SpectralGrid()
    dataset: str = "synthetic"
    dataset_size: int = 44
    dataset_seed: int = 0
    b_s: int = 7
    b_eta: int = 7

    @cached_property
    def cameras(self) -> list[SensitivityTriplet]:
        if self.dataset == "synthetic":
            return synth_camera_dataset(self.grid, self.dataset_size, self.dataset_seed)
        return sio.read_dataset(self.dataset, self.grid)

    @cached_property
    def sensitivity_bases(self) -> tuple[BasisModel, BasisModel, BasisModel]:
        return build_channel_bases(self.cameras, self.b_s)

    @cached_property
    def mean_sensitivity(self) -> SensitivityTriplet:
        return mean_sensitivity(self.cameras)

    @cached_property
    def efficiency_basis(self) -> BasisModel:
        return fourier_basis(self.grid, self.b_eta)


def make_illuminant(kind: str, grid: SpectralGrid, seed: int) -> SpectralCurve:
    if kind == "led":
        return led_illuminant(grid, seed)
    if kind == "fluorescent":
        return fluorescent_illuminant(grid, seed)
    if kind == "flat":
        return flat_illuminant(grid)
    path = Path(kind)
    if not path.is_file():
        raise ConfigError(f"illuminant must be led/fluorescent/flat or an existing CSV, got {kind!r}")
    return sio.read_curve(path, grid)


def make_mapping(spec, grid: SpectralGrid, n: int, seed: int) -> PixelToWavelengthMap:
    if spec == "random":
        return random_mapping(grid, n, seed)
    if isinstance(spec, dict) and {"a", "b", "c"} <= spec.keys():
        return PixelToWavelengthMap.from_dict(spec)
    raise ConfigError(f"mapping must be 'random' or {{a, b, c[, origin]}}, got {spec!r}")


@dataclass(frozen=True, eq=False)
class Scene:
    """A rendered ground-truth scene.

    ``map_obs``/``map_illuminant`` hold the observation used to estimate the mapping;
    they are the calibration capture itself unless a separate spiky lamp is simulated.
    """

    spec: SceneSpec
    obs: ObservationSet
    map_illuminant: SpectralCurve
    map_obs: ObservationSet

    @property
    def truth_mapping(self) -> PixelToWavelengthMap:
        return self.spec.mapping


def scene_seeds(seed: int) -> dict[str, int]:
    names = ("camera", "efficiency", "mapping", "illuminant", "noise", "map_illuminant")
    return dict(zip(names, (int(s) for s in np.random.SeedSequence(seed).generate_state(len(names)))))


def make_scene(setup: BasisSetup, seed: int, n: int = 1000, illuminant: str = "led",
               mapping="random", map_illuminant: str | None = None, noise_sigma: float = 0.0,
               camera: SensitivityTriplet | None = None, efficiency: SpectralCurve | None = None,
               in_span: bool = True, eta_form: str = "inverse") -> Scene:
    """Draw a scene: held-out camera, smooth efficiency, random covering map, rendered noiselessly
    unless ``noise_sigma`` > 0.

    With ``in_span`` the camera is projected onto the sensitivity bases. ``eta_form`` picks
    what lies in the Fourier span: ``"inverse"`` (1/eta, exactly representable by the solver)
    or ``"direct"`` (eta itself, a smooth grating response the solver only approximates).
    """
    if eta_form not in ("inverse", "direct"):
        raise ConfigError(f"eta_form must be 'inverse' or 'direct', got {eta_form!r}")
    grid = setup.grid
    seeds = scene_seeds(seed)
    if camera is None:
        camera = synth_camera(grid, seeds["camera"])
    if in_span:
        camera = project_triplet(camera, setup.sensitivity_bases)
    if efficiency is None:
        efficiency = synth_efficiency(setup.efficiency_basis, seeds["efficiency"],
                                     inverse=eta_form == "inverse")
    mp = make_mapping(mapping, grid, n, seeds["mapping"])
    e = make_illuminant(illuminant, grid, seeds["illuminant"])
    spec = SceneSpec(e, efficiency, camera, mp, n, noise_sigma, seeds["noise"])
    W = spec.weight_matrix()
    obs = render(spec, W)
    if map_illuminant is None:
        return Scene(spec, obs, e, obs)
    e_map = make_illuminant(map_illuminant, grid, seeds["map_illuminant"])
    map_spec = SceneSpec(e_map, efficiency, camera, mp, n, noise_sigma, seeds["noise"] + 1)
    return Scene(spec, obs, e_map, render(map_spec, W))


def write_scene(out_dir, scene: Scene, **meta) -> Path:
    """Observation CSVs plus ground truth for later evaluation."""
    out_dir = Path(out_dir)
    spec = scene.spec
    sio.write_observations(out_dir, scene.obs)
    sio.write_curve(out_dir / "illuminant.csv", spec.illuminant)
    if scene.map_obs is not scene.obs:
        sio.write_diffracted(out_dir / "map_dif.csv", scene.map_obs.m_dif, scene.map_obs.pixel_positions)
        sio.write_curve(out_dir / "map_illuminant.csv", scene.map_illuminant)
    sio.write_triplet(out_dir / "truth_sensitivity.csv", spec.sensitivity)
    sio.write_curve(out_dir / "truth_efficiency.csv", spec.efficiency)
    truth = {
        "grid": sio.grid_to_dict(spec.grid),
        "mapping": spec.mapping.to_dict(),
        "n": spec.n,
        "noise_sigma": spec.noise_sigma,
        "sensitivity": {c: ch.values.tolist() for c, ch in zip("rgb", spec.sensitivity.channels)},
        "efficiency": spec.efficiency.values.tolist(),
        "illuminant": spec.illuminant.values.tolist(),
        **meta,
    }
    sio.atomic_write(out_dir / "truth.json", sio.dump_json(truth))
    return out_dir
