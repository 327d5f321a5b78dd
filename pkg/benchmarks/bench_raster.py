"""Forward and backward timing of the rasterizer backends on the synthetic room.

Usage: python benchmarks/bench_raster.py [--size 128] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from splatmotion.avatar import load_default_avatar
from splatmotion.hsi import HsiAssets, HsiFrameState
from splatmotion.raster import BACKENDS, Rasterization
from splatmotion.synth import box_object, oracle_camera, random_object_pose, random_pose, room_scene


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    assets = HsiAssets(room_scene(), load_default_avatar(), box_object())
    state = HsiFrameState(random_pose(rng), random_object_pose(rng), oracle_camera(args.size, args.size))
    cloud, _, _ = assets.compose(state.human, state.object)
    grad = np.random.default_rng(1).normal(size=(args.size, args.size, 3))
    print(f"{len(cloud)} particles, {args.size}x{args.size} pixels, best of {args.repeat}")

    results = {}
    for name in sorted(BACKENDS):
        fwd = best_of(lambda: Rasterization(cloud, state.camera, backend=name), args.repeat)
        ras = Rasterization(cloud, state.camera, backend=name)
        bwd = best_of(lambda: ras.backward(d_color=grad), args.repeat)
        results[name] = (fwd, bwd, ras.color)
        print(f"{name:>7}: forward {1e3 * fwd:8.1f} ms   backward {1e3 * bwd:8.1f} ms")
    if {"cython", "python"} <= results.keys():
        c, p = results["cython"], results["python"]
        print(f"speedup: forward {p[0] / c[0]:.1f}x   backward {p[1] / c[1]:.1f}x")
        print(f"max image difference between backends: {np.abs(c[2] - p[2]).max():.1e}")


if __name__ == "__main__":
    main()
