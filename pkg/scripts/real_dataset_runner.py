"""Run the full labeling pipeline on a real pre-trained splat scene.

The bundled test fixtures are synthetic; this script documents how to take
a run at real-scene numbers (mIoU/mAcc on forward-facing or 360-degree
captures) once you have the data. You must bring:

  scene.ply      a pre-trained 3D Gaussian splat scene in the standard
                 binary layout (x y z, normals, f_dc_*, opacity, scale_*,
                 rot_*). Produced by any mainstream splat trainer; this
                 package consumes it as-is and never re-optimizes geometry.
  cameras.json   posed pinhole cameras, one record per supervision /
                 evaluation view:
                   [{"id": 0, "width": W, "height": H,
                     "fx": fx, "fy": fy, "cx": cx, "cy": cy,
                     "world_to_camera": [16 row-major floats]}, ...]
                 Converting COLMAP or other capture-pipeline poses into
                 this schema is your responsibility (watch the +z-forward
                 convention).
  masks/         one single-channel PNG per view, named mask_{id:04d}.png,
                 pixel value = class id (0 = background). Produce them with
                 any interactive 2D segmentation tool; all views must use a
                 consistent class table.

Split your views between --train-views and --eval-views so the reported
numbers come from held-out poses. Expect scenes in the 10^5..10^6 Gaussian
range to train in minutes on CPU; the per-view blend records dominate
memory (they scale with visible splats x covered pixels).

Example:
  python scripts/real_dataset_runner.py \
      --scene data/garden/scene.ply --cameras data/garden/cameras.json \
      --masks data/garden/masks -K 4 --train-views 0-23 --eval-views 24-27 \
      -o runs/garden
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from splatseg import backend, metrics
from splatseg.cli import parse_views
from splatseg.projection import project
from splatseg.rasterizer import render_semantic, semantic_argmax
from splatseg.refine import RefineConfig, apply_statistical_filter, knn_refine, segment
from splatseg.refine import save_colorized_ply, save_segmentation_json
from splatseg.scene_io import load_cameras, load_label_map, load_scene, save_scene
from splatseg.trainer import TrainConfig, TrainView, stderr_progress, train


def main() -> None:
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--scene", required=True)
    parser.add_argument("--cameras", required=True)
    parser.add_argument("--masks", required=True)
    parser.add_argument("-K", "--classes", type=int, default=None,
                        help="class count incl. background (omit if the PLY carries codes)")
    parser.add_argument("--train-views", default=None, help="e.g. 0-23")
    parser.add_argument("--eval-views", default=None, help="e.g. 24-27")
    parser.add_argument("--iterations", type=int, default=300)
    parser.add_argument("--lr", type=float, default=0.05)
    parser.add_argument("--beta", type=float, default=0.65)
    parser.add_argument("--knn-k", type=int, default=50)
    parser.add_argument("--no-filter", action="store_true")
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("-o", "--out", required=True)
    args = parser.parse_args()

    backend.set_thread_count(args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scene = load_scene(args.scene, args.classes)
    cameras = load_cameras(args.cameras)
    ids = [vid for _, vid in cameras]
    by_id = dict((vid, cam) for cam, vid in cameras)
    train_ids = parse_views(args.train_views, ids)
    eval_ids = parse_views(args.eval_views, ids) if args.eval_views else []
    masks_dir = Path(args.masks)

    def view_for(vid: int) -> TrainView:
        mask = load_label_map(masks_dir / f"mask_{vid:04d}.png", scene.K)
        return TrainView.build(by_id[vid], mask, scene.K)

    print(f"{scene.n_gaussians} gaussians, K={scene.K}, "
          f"{len(train_ids)} train / {len(eval_ids)} eval views", file=sys.stderr)

    t0 = time.perf_counter()
    views = [view_for(vid) for vid in train_ids]
    report = train(scene, views, TrainConfig(iterations=args.iterations, learning_rate=args.lr),
                   progress=stderr_progress())
    print(f"trained in {time.perf_counter() - t0:.1f}s, "
          f"objective {report.initial_objective:.4f} -> {report.final_objective:.4f}",
          file=sys.stderr)

    cfg = RefineConfig(beta=args.beta, k=args.knn_k)
    scene = knn_refine(scene, cfg)
    seg = segment(scene)
    if not args.no_filter:
        seg, _ = apply_statistical_filter(scene, seg, cfg)

    save_scene(scene, out / "scene.ply")
    report.save_json(out / "report.json")
    save_segmentation_json(seg, out / "segmentation.json", scene.class_names)
    save_colorized_ply(scene, seg, out / "segmentation_colored.ply")

    if eval_ids:
        pooled = metrics.ConfusionMatrix(np.zeros((scene.K, scene.K), dtype=np.int64))
        for vid in eval_ids:
            gt = load_label_map(masks_dir / f"mask_{vid:04d}.png", scene.K)
            image, _ = render_semantic(scene, project(scene, by_id[vid]))
            pooled = pooled + metrics.confusion(gt, semantic_argmax(image), scene.K)
        miou, macc = metrics.miou_macc(pooled)
        print(metrics.format_metrics_table(
            pooled, miou, macc, scene.class_names, "pooled, background included"))
        with open(out / "metrics.json", "w") as fh:
            json.dump({"miou": miou, "macc": macc, "eval_views": eval_ids,
                       "protocol": "pooled, background included"}, fh, indent=1)


if __name__ == "__main__":
    main()
