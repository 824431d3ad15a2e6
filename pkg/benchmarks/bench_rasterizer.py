"""Benchmark the jitted blending kernels against the pure-numpy fallback.

Run: python benchmarks/bench_rasterizer.py [--gaussians N] [--size W H]

Times the three hot paths (forward pass with record capture, record replay,
code-gradient accumulation) under both backends and prints the speedup.
Outputs are cross-checked while benchmarking, so this doubles as a
large-instance equivalence test.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from splatseg import backend
from splatseg.projection import project
from splatseg.rasterizer import backward_codes, render_semantic, replay_semantic
from splatseg.scene_io import Scene, default_class_names
from splatseg.synthetic import look_at_camera


def build_instance(n: int, size: tuple[int, int], k: int, seed: int):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    scene = Scene(
        means=rng.uniform(-1.6, 1.6, size=(n, 3)),
        scales=rng.uniform(0.03, 0.2, size=(n, 3)),
        rotations=q,
        opacities=rng.uniform(0.3, 0.95, size=n),
        colors_dc=rng.normal(scale=0.5, size=(n, 3)),
        object_codes=rng.normal(size=(n, k)),
        class_names=default_class_names(k),
    )
    camera = look_at_camera((0.0, 0.6, -5.0), (0.0, 0.0, 0.0), size[0], size[1], 55.0)
    return scene, camera


def timed(fn, n_runs: int, n_warmup: int = 2):
    for _ in range(n_warmup):
        out = fn()
    samples = []
    for _ in range(n_runs):
        t0 = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - t0)
    return out, np.mean(samples) * 1e3, np.std(samples) * 1e3


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--gaussians", type=int, default=2000)
    parser.add_argument("--size", type=int, nargs=2, default=(256, 256), metavar=("W", "H"))
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--runs", type=int, default=5)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    if not backend.HAS_NUMBA:
        print("numba not installed; only the numpy backend is available")
        return

    scene, camera = build_instance(args.gaussians, tuple(args.size), args.classes, seed=1)
    splats = project(scene, camera)
    grad_pixels = np.random.default_rng(2).normal(size=(camera.height, camera.width, scene.K))
    backend.set_thread_count(args.threads)
    print(
        f"{len(splats)} visible splats, {args.size[0]}x{args.size[1]} px, "
        f"K={args.classes}, {args.threads} thread(s), {args.runs} timed runs"
    )

    results = {}
    for name in ("numba", "numpy"):
        with backend.use_backend(name):
            (_, record), t_fwd, s_fwd = timed(lambda: render_semantic(scene, splats), args.runs)
            img, t_rep, s_rep = timed(lambda: replay_semantic(scene, record), args.runs)
            grads, t_bwd, s_bwd = timed(
                lambda: backward_codes(record, grad_pixels, scene), args.runs
            )
        results[name] = {
            "forward": (t_fwd, s_fwd),
            "replay": (t_rep, s_rep),
            "backward": (t_bwd, s_bwd),
            "image": img.data,
            "grads": grads,
            "entries": record.entry_weight.size,
        }

    print(f"blend record: {results['numba']['entries']} entries")
    print(f"{'kernel':<10}{'numba':>16}{'numpy':>16}{'speedup':>9}")
    for key in ("forward", "replay", "backward"):
        tn, sn = results["numba"][key]
        tp, sp = results["numpy"][key]
        print(
            f"{key:<10}{tn:>9.2f} ± {sn:<5.2f}{tp:>9.2f} ± {sp:<5.2f}{tp / tn:>8.1f}x"
        )
    img_diff = np.abs(results["numba"]["image"] - results["numpy"]["image"]).max()
    grad_diff = np.abs(results["numba"]["grads"] - results["numpy"]["grads"]).max()
    print(f"cross-check: max image diff {img_diff:.2e}, max grad diff {grad_diff:.2e}")


if __name__ == "__main__":
    main()
