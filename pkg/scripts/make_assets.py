"""Regenerate the NBG grids shipped in src/nbound/data."""

import argparse
from pathlib import Path

import numpy as np

from nbound.indicator import GridIndicator, save_grid

DATA = Path(__file__).resolve().parents[1] / "src" / "nbound" / "data"


def fish(res=32):
    """Side view of a fish: elliptic body, forked tail, eye hole."""
    u = (np.arange(res) + 0.5) / res
    x, y = np.meshgrid(u, u, indexing="ij")
    body = ((x - 0.45) / 0.30) ** 2 + ((y - 0.5) / 0.17) ** 2 <= 1.0
    dx = x - 0.70
    tail = (dx >= 0) & (dx <= 0.22) & (np.abs(y - 0.5) <= 0.05 + 0.9 * dx)
    fork = (x >= 0.84) & (np.abs(y - 0.5) <= 0.6 * (x - 0.84))
    eye = (x - 0.27) ** 2 + (y - 0.55) ** 2 <= 0.03 ** 2
    return GridIndicator((body | tail) & ~fork & ~eye)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    g = fish()
    save_grid(g, args.out / "fish.nbg")
    print(f"fish.nbg: shape={g.shape} occupancy={g.occupancy():.3f}")


if __name__ == "__main__":
    main()
