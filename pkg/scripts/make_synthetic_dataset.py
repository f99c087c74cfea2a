"""Write the synthetic camera dataset and the built-in illuminants as CSV files.

    python scripts/make_synthetic_dataset.py --out data/synthetic --count 44 --seed 0

The dataset directory can be passed to ``specal basis --dataset``.
"""

import argparse
from pathlib import Path

from specal import io as sio
from specal.basis import build_channel_bases, mean_sensitivity
from specal.core import CHANNELS, SpectralGrid
from specal.forward import fluorescent_illuminant, led_illuminant, synth_camera_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="data/synthetic")
    p.add_argument("--count", type=int, default=44)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rank", type=int, default=7)
    args = p.parse_args()

    grid = SpectralGrid()
    out = Path(args.out)
    cams = synth_camera_dataset(grid, args.count, args.seed)
    sio.write_dataset(out / "cameras", cams)
    sio.write_triplet(out / "mean_s.csv", mean_sensitivity(cams))
    sio.write_bases(out / "basis.csv", dict(zip(CHANNELS, build_channel_bases(cams, args.rank))))
    sio.write_curve(out / "led.csv", led_illuminant(grid, args.seed))
    sio.write_curve(out / "fluorescent.csv", fluorescent_illuminant(grid, args.seed))
    print(f"wrote {len(cams)} cameras, mean, rank-{args.rank} bases and two illuminants to {out}")


if __name__ == "__main__":
    main()
