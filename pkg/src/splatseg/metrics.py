"""Segmentation quality metrics: confusion matrix, mIoU, mAcc.

The mIoU/mAcc protocol is configurable because conventions differ: the
default pools one confusion matrix over all evaluated views and includes
the background class; reports always name the protocol used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatseg.scene_io import LabelMap


@dataclass
class ConfusionMatrix:
    """K x K pixel counts; rows = ground truth, columns = prediction."""

    counts: np.ndarray

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(gt: LabelMap, pred: LabelMap, k: int) -> ConfusionMatrix:
    """Pixelwise confusion counts between two label maps."""
    if (gt.width, gt.height) != (pred.width, pred.height):
        raise ValueError(
            f"dimension mismatch: gt {gt.width}x{gt.height} vs pred {pred.width}x{pred.height}"
        )
    g = gt.labels.ravel().astype(np.int64)
    p = pred.labels.ravel().astype(np.int64)
    if g.size and (g.max() >= k or p.max() >= k):
        raise ValueError(f"labels exceed K={k}")
    counts = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts=counts)


def miou_macc(cm: ConfusionMatrix, include_background: bool = True) -> tuple[float, float]:
    """Mean IoU and mean per-class accuracy over classes present in GT.

    IoU_i = TP / (TP + FP + FN), Acc_i = TP / (TP + FN). Classes with no
    ground-truth pixels (hence absent from the GT side) are excluded from
    both means, as are any degenerate zero-denominator classes.
    """
    counts = cm.counts.astype(np.float64)
    if counts.sum() == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(counts)
    gt_total = counts.sum(axis=1)   # TP + FN
    pred_total = counts.sum(axis=0)  # TP + FP
    union = gt_total + pred_total - tp

    valid = gt_total > 0
    if not include_background:
        valid[0] = False
    iou_valid = valid & (union > 0)
    acc_valid = valid  # gt_total > 0 already
    if not iou_valid.any() or not acc_valid.any():
        raise ValueError("no classes left to average over")
    miou = float(np.mean(tp[iou_valid] / union[iou_valid]))
    macc = float(np.mean(tp[acc_valid] / gt_total[acc_valid]))
    return miou, macc


def gaussian_accuracy(segmentation, planted: np.ndarray) -> float:
    """Fraction of Gaussians classified as their planted label.

    Accepts a :class:`splatseg.refine.Segmentation` or a plain label array.
    """
    class_of = np.asarray(getattr(segmentation, "class_of", segmentation))
    planted = np.asarray(planted)
    if class_of.shape != planted.shape:
        raise ValueError(f"length mismatch: {class_of.shape} vs {planted.shape}")
    if class_of.size == 0:
        raise ValueError("empty labeling")
    return float(np.mean(class_of == planted))


def format_metrics_table(
    cm: ConfusionMatrix, miou: float, macc: float, class_names=None, protocol: str = ""
) -> str:
    """Human-readable per-class breakdown."""
    k = cm.K
    names = list(class_names) if class_names else [f"class_{i}" for i in range(k)]
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    gt_total = counts.sum(axis=1)
    union = gt_total + counts.sum(axis=0) - tp
    lines = [f"{'class':<16}{'gt px':>10}{'IoU':>9}{'Acc':>9}"]
    for i in range(k):
        if gt_total[i] == 0:
            lines.append(f"{names[i]:<16}{0:>10}{'-':>9}{'-':>9}")
            continue
        iou = tp[i] / union[i] if union[i] > 0 else float("nan")
        acc = tp[i] / gt_total[i]
        lines.append(f"{names[i]:<16}{int(gt_total[i]):>10}{iou:>9.4f}{acc:>9.4f}")
    suffix = f"  [{protocol}]" if protocol else ""
    lines.append(f"{'mean':<16}{cm.total:>10}{miou:>9.4f}{macc:>9.4f}{suffix}")
    return "\n".join(lines)
