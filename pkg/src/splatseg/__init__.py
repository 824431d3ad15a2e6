"""Semantic labeling of pre-trained 3D Gaussian splat scenes.

Per-Gaussian class-score vectors are learned against posed 2D segmentation
masks through a differentiable alpha-blending rasterizer, then refined with
nearest-neighbor code averaging and per-class statistical outlier
filtering. See the ``splatseg`` CLI for the end-to-end pipeline.
"""

from splatseg.backend import active_backend, set_backend, set_thread_count, use_backend
from splatseg.projection import Splat2D, SplatList, build_cov3d, project
from splatseg.rasterizer import (
    BlendRecord,
    SemanticImage,
    alpha_at,
    backward_codes,
    render_color,
    render_semantic,
    replay_semantic,
    semantic_argmax,
)
from splatseg.refine import (
    RefineConfig,
    Segmentation,
    extract_objects,
    knn_refine,
    segment,
    select_ambiguous,
    statistical_filter,
)
from splatseg.scene_io import (
    Camera,
    Gaussian,
    LabelMap,
    Scene,
    load_cameras,
    load_label_map,
    load_scene,
    save_scene,
)
from splatseg.trainer import TrainConfig, TrainReport, TrainView, ce_loss, make_one_hot, train

__version__ = "0.1.0"
