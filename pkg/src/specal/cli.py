"""``specal`` command line.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 data error. Failures print
one JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as sio
from .basis import build_channel_bases, fourier_basis, mean_sensitivity
from .core import (
    CHANNELS,
    ConfigError,
    ObservationSet,
    SensitivityTriplet,
    SpecalError,
    SpectralCurve,
    SpectralGrid,
)
from .forward import synth_camera_dataset
from .mapping import (
    ICP_ITERATIONS,
    PixelToWavelengthMap,
    build_weight_matrix,
    estimate_map_icp,
    estimate_map_peaks,
    mapping_re,
)
from .metrics import efficiency_cosine, emit_report, sensitivity_re
from .pipeline import (
    SceneConfig,
    config_from_dict,
    error_record,
    load_config,
    run_pipeline,
    validate_setup,
)
from .scenes import make_scene, write_scene
from .solver import calibrate

log = logging.getLogger("specal")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def cmd_simulate(args) -> int:
    """Render a single scene (flat scene keys) or every scene of a manifest."""
    d = _read_json(args.config)
    scene_keys = set(SceneConfig.__dataclass_fields__)
    if "scenes" not in d:
        scene = {k: d.pop(k) for k in list(d) if k in scene_keys}
        d["scenes"] = [{"name": "scene", **scene}]
        single = True
    else:
        single = False
    d.setdefault("out_dir", str(args.out_dir))
    cfg = config_from_dict(d, Path(args.config).parent)
    out = Path(args.out_dir)
    val = validate_setup(cfg)
    if not val.ok:
        raise ConfigError("; ".join(f"{c.name}: {c.detail}" for c in val.failures))
    setup = cfg.basis_setup
    for i, sc in enumerate(cfg.scenes):
        if not sc.simulated:
            raise ConfigError(f"scene {sc.name!r} has obs_dir; simulate only renders synthetic scenes")
        sigma = cfg.noise_sigma if sc.noise_sigma is None else sc.noise_sigma
        seed = cfg.scene_seed(i)
        scene = make_scene(setup, seed, n=cfg.n, illuminant=cfg.resolve(sc.illuminant), mapping=sc.mapping,
                           map_illuminant=cfg.resolve(sc.map_illuminant), noise_sigma=sigma,
                           in_span=sc.in_span, eta_form=sc.eta_form)
        write_scene(out if single else out / sc.name, scene, seed=seed, name=sc.name)
    sio.write_bases(out / "basis.csv", {**dict(zip(CHANNELS, setup.sensitivity_bases)),
                                        "eta": setup.efficiency_basis})
    sio.write_triplet(out / "mean_s.csv", setup.mean_sensitivity)
    return 0


def cmd_basis(args) -> int:
    channels = tuple(args.channels)
    if not channels or any(c not in CHANNELS for c in channels) or len(set(channels)) != len(channels):
        raise ConfigError(f"--channels must be a subset of 'rgb', got {args.channels!r}")
    if args.dataset == "synthetic":
        cams = synth_camera_dataset(SpectralGrid(), args.dataset_size, args.seed)
    else:
        cams = sio.read_dataset(args.dataset)
    bases = dict(zip(CHANNELS, build_channel_bases(cams, args.rank)))
    out = {c: bases[c] for c in channels}
    if args.eta_rank:
        out["eta"] = fourier_basis(cams[0].grid, args.eta_rank)
    sio.write_bases(args.out, out)
    if args.mean_out:
        sio.write_triplet(args.mean_out, mean_sensitivity(cams))
    return 0


def cmd_map(args) -> int:
    e = sio.read_curve(args.illuminant)
    mean_s = sio.read_triplet(args.mean_s, e.grid)
    m_dif, pixels = sio.read_diffracted(args.obs)
    # the map estimators only look at the diffracted profile
    obs = ObservationSet(np.zeros(3), m_dif, pixels)
    obs.check_against(e.grid)
    if args.mode == "peaks":
        mapping = estimate_map_peaks(obs, e, mean_s)
    else:
        mapping = estimate_map_icp(obs, e, mean_s, iters=args.iters)
    sio.write_map(args.out, mapping, mode=args.mode)
    return 0


def cmd_calibrate(args) -> int:
    bases = sio.read_bases(args.basis_s)
    missing = [c for c in CHANNELS if c not in bases]
    if missing:
        raise ConfigError(f"{args.basis_s}: missing sensitivity basis for channel(s) {missing}")
    B_s = tuple(bases[c] for c in CHANNELS)
    grid = B_s[0].grid
    B_eta = sio.parse_eta_basis(args.basis_eta, grid)
    e = sio.read_curve(args.illuminant, grid)
    obs = sio.read_observations(args.obs_dir)
    obs.check_against(grid)
    mapping = sio.read_map(args.map)
    W = build_weight_matrix(mapping, obs.pixel_positions, grid)
    sol = calibrate(obs, W, e, B_s, B_eta)
    sio.write_solution(args.out, sol)
    return 0


def _read_truth(path, grid):
    path = Path(path)
    if path.suffix == ".json":
        d = _read_json(path)
        tgrid = sio.grid_from_dict(d["grid"])
        s = SensitivityTriplet(*(SpectralCurve(tgrid, d["sensitivity"][c]) for c in CHANNELS))
        eta = SpectralCurve(tgrid, d["efficiency"]) if "efficiency" in d else None
        mapping = PixelToWavelengthMap.from_dict(d["mapping"]) if "mapping" in d else None
        return s, eta, mapping, d.get("n")
    return sio.read_triplet(path, grid), None, None, None


def cmd_eval(args) -> int:
    est_s, est_eta = sio.read_solution_curves(args.est)
    truth_s, truth_eta, truth_map, n = _read_truth(args.truth, est_s.grid)
    rep = sensitivity_re(est_s, truth_s, normalize=True)
    if truth_eta is not None:
        rep.efficiency_cosine = efficiency_cosine(est_eta, truth_eta)
    if args.map and truth_map is not None and n:
        rep.mapping_re = mapping_re(sio.read_map(args.map), truth_map, np.arange(n), est_s.grid)
    rep.metadata = {"scene": args.scene or Path(args.est).stem}
    fmt = "json" if str(args.out).endswith(".json") else "csv"
    emit_report([rep], args.out, fmt)
    print(f"RE {rep.re:.6g}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir or args.jobs:
        cfg = replace(cfg, out_dir=str(args.out_dir or cfg.out_dir), jobs=args.jobs or cfg.jobs)
    res = run_pipeline(cfg)
    for line in res.validation.lines():
        log.info(line)
    for rep in res.reports:
        print(f"{rep.metadata.get('scene')}: RE {rep.re:.4g}")
    for err in res.errors:
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return res.exit_code


def cmd_validate(args) -> int:
    if args.config:
        d = _read_json(args.config)
        d.setdefault("out_dir", ".")
        d.setdefault("scenes", [{"name": "scene"}])
    else:
        d = {"out_dir": ".", "scenes": [{"name": "scene"}]}
    if args.n is not None:
        d["n"] = args.n
    basis = d.setdefault("basis", {})
    if args.b_s is not None:
        basis["b_s"] = args.b_s
    if args.b_eta is not None:
        basis["b_eta"] = args.b_eta
    if args.f is not None:
        d.setdefault("grid", {})["f"] = args.f
    cfg = config_from_dict(d, Path(args.config).parent if args.config else ".")
    report = validate_setup(cfg)
    print("\n".join(report.lines()))
    return 0 if report.ok else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render synthetic observations plus ground truth")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("basis", help="per-channel SVD sensitivity bases from a camera dataset")
    s.add_argument("--dataset", required=True, help="directory of wavelength_nm,r,g,b CSVs, or 'synthetic'")
    s.add_argument("--channels", default="rgb")
    s.add_argument("--rank", type=int, default=7)
    s.add_argument("--eta-rank", type=int, default=0, help="also write a Fourier efficiency basis")
    s.add_argument("--dataset-size", type=int, default=44)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mean-out", help="write the dataset mean sensitivity here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_basis)

    s = sub.add_parser("map", help="estimate the pixel-to-wavelength map")
    s.add_argument("--mode", choices=("peaks", "icp"), required=True)
    s.add_argument("--obs", required=True, help="diffracted observation CSV")
    s.add_argument("--illuminant", required=True)
    s.add_argument("--mean-s", required=True)
    s.add_argument("--iters", type=int, default=ICP_ITERATIONS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_map)

    s = sub.add_parser("calibrate", help="solve for sensitivity and grating efficiency")
    s.add_argument("--obs-dir", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--illuminant", required=True)
    s.add_argument("--basis-s", required=True)
    s.add_argument("--basis-eta", default="fourier:7")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("eval", help="compare a solution against ground truth")
    s.add_argument("--est", required=True)
    s.add_argument("--truth", required=True, help="truth.json from simulate, or a triplet CSV")
    s.add_argument("--map", help="estimated map.json, scored against the truth mapping")
    s.add_argument("--scene")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="run a JSON manifest end to end")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("validate", help="preflight checks for a setup")
    s.add_argument("--config")
    s.add_argument("--n", type=int)
    s.add_argument("--f", type=int)
    s.add_argument("--b-s", type=int)
    s.add_argument("--b-eta", type=int)
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SpecalError as exc:
        rec = {"command": args.command, **error_record(exc)}
    except OSError as exc:
        rec = {"command": args.command, "module": "cli-pipeline", "op": args.command,
               "error": type(exc).__name__, "message": str(exc), "exit_code": 4}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return rec["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
