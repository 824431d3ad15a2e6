"""Command-line pipeline: synth -> train -> refine -> render / extract -> eval.

All commands are deterministic under a fixed seed and config, independent
of the worker thread count. Exit codes: 0 ok, 1 runtime failure, 2 usage
error.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from splatseg import backend, metrics, refine, synthetic
from splatseg.errors import SplatsegError
from splatseg.projection import project
from splatseg.rasterizer import (
    render_semantic,
    save_probability_pgm,
    semantic_argmax,
)
from splatseg.scene_io import (
    load_cameras,
    load_label_map,
    load_scene,
    save_cameras,
    save_label_map,
    save_scene,
)
from splatseg.trainer import TrainConfig, TrainView, stderr_progress, train

_PRESETS = {
    "two-blob": synthetic.two_blob_spec,
    "three-blob": synthetic.three_blob_spec,
}


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def parse_views(text: str | None, available: list[int]) -> list[int]:
    """Parse "0-7,9" style view selections against the available ids."""
    if not text:
        return list(available)
    chosen: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            chosen.extend(range(int(lo), int(hi) + 1))
        else:
            chosen.append(int(part))
    missing = sorted(set(chosen) - set(available))
    if missing:
        raise click.UsageError(f"view ids {missing} not present (available: {sorted(available)})")
    return sorted(set(chosen))


def _apply_config(ctx: click.Context, config_path: str | None, values: dict) -> dict:
    """Fill in option values from a TOML file where the CLI used defaults."""
    if not config_path:
        return values
    with open(config_path, "rb") as fh:
        cfg = tomllib.load(fh)
    flat = {}
    for key, val in cfg.items():
        if isinstance(val, dict):
            flat.update(val)
        else:
            flat[key] = val
    out = dict(values)
    for name in values:
        if name in flat and ctx.get_parameter_source(name) == click.core.ParameterSource.DEFAULT:
            out[name] = flat[name]
    return out


def _threads_option(fn):
    return click.option(
        "--threads", type=int, default=1, show_default=True,
        help="Worker threads for the jitted kernels (outputs do not depend on it).",
    )(fn)


def _config_option(fn):
    return click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
        default=None, help="TOML file supplying defaults for any option not given on the command line.",
    )(fn)


@click.group()
@click.version_option(package_name="splatseg", prog_name="splatseg")
def main() -> None:
    """Semantic labeling for 3D Gaussian splat scenes."""


# ---------------------------------------------------------------------------
# synth


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON fixture spec (see README for the schema).")
@click.option("--preset", type=click.Choice(sorted(_PRESETS)), default=None,
              help="Built-in demo fixture.")
@click.option("--seed", type=int, default=None, help="Override the spec seed.")
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
def synth(spec_path, preset, seed, out_dir) -> None:
    """Generate a labeled synthetic fixture (scene, cameras, masks)."""
    if (spec_path is None) == (preset is None):
        raise click.UsageError("give exactly one of --spec or --preset")
    if preset:
        spec = _PRESETS[preset]()
    else:
        with open(spec_path) as fh:
            spec = synthetic.spec_from_dict(json.load(fh))
    if seed is not None:
        spec.seed = seed
    try:
        result = synthetic.generate(spec)
    except ValueError as exc:
        raise click.UsageError(str(exc))

    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    save_scene(result.scene, out / "scene.ply")
    save_cameras([(cam, i) for i, (cam, _) in enumerate(result.views)], out / "cameras.json")
    for i, (_, mask) in enumerate(result.views):
        save_label_map(mask, out / "masks" / f"mask_{i:04d}.png")
    with open(out / "planted_labels.json", "w") as fh:
        json.dump(
            {
                "K": result.scene.K,
                "class_names": result.scene.class_names,
                "labels": [int(c) for c in result.planted],
                "n_train_views": result.n_train,
            },
            fh,
        )
    with open(out / "spec.json", "w") as fh:
        json.dump(synthetic.spec_to_dict(spec), fh, indent=1)
    click.echo(
        f"wrote {len(result.scene)} gaussians, {len(result.views)} views "
        f"({result.n_train} train) to {out}"
    )


# ---------------------------------------------------------------------------
# train


def _load_views(cameras_path, masks_dir, k, views_text):
    cameras = load_cameras(cameras_path)
    ids = [vid for _, vid in cameras]
    selected = parse_views(views_text, ids)
    by_id = dict((vid, cam) for cam, vid in cameras)
    masks = Path(masks_dir)
    out = []
    for vid in selected:
        mask_path = masks / f"mask_{vid:04d}.png"
        if not mask_path.exists():
            raise click.UsageError(f"mask for view {vid} not found: {mask_path}")
        out.append((by_id[vid], load_label_map(mask_path, k), vid))
    return out


@main.command(name="train")
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--cameras", "cameras_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--masks", "masks_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("-K", "--classes", "k", type=int, default=None,
              help="Class count; only needed when the scene PLY carries no codes.")
@click.option("--views", "views_text", default=None, help="View ids to train on, e.g. 0-7.")
@click.option("--iterations", type=int, default=300, show_default=True)
@click.option("--lr", "learning_rate", type=float, default=0.05, show_default=True)
@click.option("--optimizer", type=click.Choice(["adam", "sgd"]), default="adam", show_default=True)
@click.option("--batch", type=int, default=1, show_default=True)
@click.option("--raw-codes", is_flag=True, help="Blend raw logits instead of per-Gaussian softmax.")
@click.option("--log-every", type=int, default=50, show_default=True)
@_threads_option
@_config_option
@click.pass_context
def cmd_train(ctx, scene_path, cameras_path, masks_dir, out_dir, k, views_text,
              iterations, learning_rate, optimizer, batch, raw_codes, log_every,
              threads, config_path) -> None:
    """Optimize per-Gaussian class codes against mask supervision."""
    opts = _apply_config(ctx, config_path, {
        "iterations": iterations, "learning_rate": learning_rate, "optimizer": optimizer,
        "batch": batch, "threads": threads,
    })
    backend.set_thread_count(opts["threads"])
    try:
        scene = load_scene(scene_path, k)
        views = [
            TrainView.build(cam, mask, scene.K)
            for cam, mask, _ in _load_views(cameras_path, masks_dir, scene.K, views_text)
        ]
        cfg = TrainConfig(
            iterations=opts["iterations"],
            learning_rate=opts["learning_rate"],
            optimizer=opts["optimizer"],
            batch=opts["batch"],
            normalize_codes=not raw_codes,
        )
        t0 = time.perf_counter()
        report = train(scene, views, cfg, progress=stderr_progress(log_every))
        wall = time.perf_counter() - t0
    except SplatsegError as exc:
        _fail(str(exc))
    except ValueError as exc:
        raise click.UsageError(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out / "scene.ply")
    report.save_json(out / "report.json")
    click.echo(
        f"trained {cfg.iterations} iterations over {len(views)} views in {wall:.2f}s; "
        f"objective {report.initial_objective:.5f} -> {report.final_objective:.5f}"
    )


# ---------------------------------------------------------------------------
# refine


@main.command(name="refine")
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--beta", type=float, default=0.65, show_default=True,
              help="Confidence threshold below which codes get averaged.")
@click.option("--knn-k", type=int, default=50, show_default=True)
@click.option("--filter-k", type=int, default=50, show_default=True)
@click.option("--filter-std-mult", type=float, default=1.0, show_default=True)
@click.option("--no-knn", is_flag=True, help="Skip the neighbor-averaging stage.")
@click.option("--no-filter", is_flag=True, help="Skip the (optional) outlier filtering stage.")
@_threads_option
@_config_option
@click.pass_context
def cmd_refine(ctx, scene_path, out_dir, beta, knn_k, filter_k, filter_std_mult,
               no_knn, no_filter, threads, config_path) -> None:
    """Neighbor-average low-confidence codes, then drop spatial outliers."""
    opts = _apply_config(ctx, config_path, {
        "beta": beta, "knn_k": knn_k, "filter_k": filter_k,
        "filter_std_mult": filter_std_mult, "threads": threads,
    })
    backend.set_thread_count(opts["threads"])
    try:
        scene = load_scene(scene_path)
        cfg = refine.RefineConfig(
            beta=opts["beta"], k=opts["knn_k"],
            filter_k=opts["filter_k"], filter_std_mult=opts["filter_std_mult"],
        )
        if not no_knn:
            scene = refine.knn_refine(scene, cfg)
        seg = refine.segment(scene)
        n_removed = 0
        if not no_filter:
            seg, outcomes = refine.apply_statistical_filter(scene, seg, cfg)
            n_removed = sum(len(o.removed) for o in outcomes.values())
    except SplatsegError as exc:
        _fail(str(exc))
    except ValueError as exc:
        raise click.UsageError(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out / "scene.ply")
    refine.save_segmentation_json(seg, out / "segmentation.json", scene.class_names)
    refine.save_colorized_ply(scene, seg, out / "segmentation_colored.ply")
    click.echo(
        f"refined {len(scene)} gaussians; filtered {n_removed} to background; wrote {out}"
    )


# ---------------------------------------------------------------------------
# render


@main.command(name="render")
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--cameras", "cameras_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--views", "views_text", default=None, help="View ids to render (default: all).")
@click.option("--raw-codes", is_flag=True)
@click.option("--prob-class", type=int, default=None,
              help="Also dump this class's probability channel as PGM.")
@_threads_option
def cmd_render(scene_path, cameras_path, out_dir, views_text, raw_codes, prob_class, threads) -> None:
    """Render class-ID label maps for the given camera poses."""
    backend.set_thread_count(threads)
    try:
        scene = load_scene(scene_path)
        cameras = load_cameras(cameras_path)
        selected = parse_views(views_text, [vid for _, vid in cameras])
        by_id = dict((vid, cam) for cam, vid in cameras)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for vid in selected:
            image, _ = render_semantic(scene, project(scene, by_id[vid]), not raw_codes)
            save_label_map(semantic_argmax(image), out / f"label_{vid:04d}.png")
            if prob_class is not None:
                save_probability_pgm(image, prob_class, out / f"prob_{prob_class}_{vid:04d}.pgm")
    except SplatsegError as exc:
        _fail(str(exc))
    except ValueError as exc:
        raise click.UsageError(str(exc))
    click.echo(f"rendered {len(selected)} label maps to {out}")


# ---------------------------------------------------------------------------
# extract


@main.command(name="extract")
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--classes", "classes_text", required=True, help="Comma-separated class ids, e.g. 1,3.")
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), required=True)
def cmd_extract(scene_path, classes_text, out_path) -> None:
    """Write the sub-scene of every Gaussian classified into the given classes."""
    try:
        class_ids = [int(p) for p in classes_text.split(",") if p.strip()]
    except ValueError:
        raise click.UsageError(f"bad --classes value: {classes_text!r}")
    try:
        scene = load_scene(scene_path)
        seg = refine.segment(scene)
        sub = refine.extract_objects(scene, seg, class_ids)
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        save_scene(sub, out_path)
    except SplatsegError as exc:
        _fail(str(exc))
    except ValueError as exc:
        raise click.UsageError(str(exc))
    click.echo(f"extracted {len(sub)} of {len(scene)} gaussians (classes {class_ids})")


# ---------------------------------------------------------------------------
# eval


@main.command(name="eval")
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--cameras", "cameras_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--masks", "masks_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Where to write the metrics JSON.")
@click.option("--views", "views_text", default=None)
@click.option("--per-view", is_flag=True,
              help="Average mIoU/mAcc over views instead of pooling one confusion matrix.")
@click.option("--exclude-background", is_flag=True)
@click.option("--raw-codes", is_flag=True)
@_threads_option
def cmd_eval(scene_path, cameras_path, masks_dir, out_path, views_text, per_view,
             exclude_background, raw_codes, threads) -> None:
    """Score rendered label maps against ground-truth masks."""
    backend.set_thread_count(threads)
    try:
        scene = load_scene(scene_path)
        k = scene.K
        triples = _load_views(cameras_path, masks_dir, k, views_text)
        pooled = metrics.ConfusionMatrix(np.zeros((k, k), dtype=np.int64))
        per_view_scores = []
        for cam, gt, vid in triples:
            image, _ = render_semantic(scene, project(scene, cam), not raw_codes)
            cm = metrics.confusion(gt, semantic_argmax(image), k)
            pooled = pooled + cm
            if per_view:
                per_view_scores.append(metrics.miou_macc(cm, not exclude_background))
        if per_view:
            miou = float(np.mean([s[0] for s in per_view_scores]))
            macc = float(np.mean([s[1] for s in per_view_scores]))
        else:
            miou, macc = metrics.miou_macc(pooled, not exclude_background)
    except SplatsegError as exc:
        _fail(str(exc))
    except ValueError as exc:
        raise click.UsageError(str(exc))

    protocol = (
        f"{'per-view' if per_view else 'pooled'}, "
        f"background {'excluded' if exclude_background else 'included'}"
    )
    click.echo(metrics.format_metrics_table(pooled, miou, macc, scene.class_names, protocol))
    if out_path:
        payload = {
            "miou": miou,
            "macc": macc,
            "protocol": protocol,
            "views": [vid for _, _, vid in triples],
            "confusion": [[int(v) for v in row] for row in pooled.counts],
        }
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w") as fh:
            json.dump(payload, fh, indent=1)


if __name__ == "__main__":
    main()
