"""SVG and CSV renderings of heatmaps and bird's-eye-view boxes."""

import logging
import math
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bev_init import BevGridSpec, Selection  # noqa: E402
from .detector import Box3D  # noqa: E402
from .exceptions import ProjdetError  # noqa: E402

logger = logging.getLogger(__name__)


def write_heatmap_csv(path: str, values: np.ndarray) -> str:
    """One CSV row per BEV row ``j`` (y), one column per ``i`` (x)."""
    try:
        np.savetxt(path, np.asarray(values, dtype=np.float64), delimiter=",", fmt="%.8g")
    except IOError as e:
        raise ProjdetError(f"Failed to write heatmap {path}: {str(e)}")
    return path


def save_heatmap_svg(path: str, values: np.ndarray, spec: BevGridSpec,
                     selections: Optional[Sequence[Selection]] = None,
                     gt_boxes: Optional[Sequence[Box3D]] = None, title: str = "heatmap") -> str:
    """Render a heatmap over the perception range with selected query positions overlaid."""
    fig, ax = plt.subplots(figsize=(5, 5))
    image = ax.imshow(np.asarray(values), cmap="viridis", origin="lower", vmin=0.0, vmax=1.0,
                      extent=[spec.x_range[0], spec.x_range[1], spec.y_range[0], spec.y_range[1]])
    fig.colorbar(image, ax=ax, fraction=0.046)
    if selections:
        xy = np.array([s.xy for s in selections])
        ax.scatter(xy[:, 0], xy[:, 1], marker="x", s=18, c="red", label="queries")
    if gt_boxes:
        centers = np.array([b.center[:2] for b in gt_boxes])
        ax.scatter(centers[:, 0], centers[:, 1], marker="o", s=30, facecolors="none", edgecolors="white",
                   label="ground truth")
    if selections or gt_boxes:
        ax.legend(loc="upper right", fontsize=7)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    return _save(fig, path)


def _box_corners(box: Box3D) -> np.ndarray:
    w, l, _ = box.size
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local = np.array([[l, w], [l, -w], [-l, -w], [-l, w], [l, w]]) * 0.5
    rotation = np.array([[c, -s], [s, c]])
    return local @ rotation.T + box.center[:2]


def save_bev_svg(path: str, preds: Sequence[Box3D], gts: Sequence[Box3D], spec: BevGridSpec,
                 title: str = "detections") -> str:
    """Draw predicted (red) and ground-truth (green) box footprints in the BEV plane."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for box in gts:
        corners = _box_corners(box)
        ax.plot(corners[:, 0], corners[:, 1], color="green", linewidth=1.2)
    for box in preds:
        corners = _box_corners(box)
        ax.plot(corners[:, 0], corners[:, 1], color="red", linewidth=0.8, alpha=max(min(box.score, 1.0), 0.15))
    ax.plot([0.0], [0.0], marker="^", color="black")
    ax.set_xlim(*spec.x_range)
    ax.set_ylim(*spec.y_range)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    return _save(fig, path)


def _save(fig, path: str) -> str:
    try:
        fig.savefig(path, format="svg", bbox_inches="tight")
    except IOError as e:
        raise ProjdetError(f"Failed to write plot {path}: {str(e)}")
    finally:
        plt.close(fig)
    logger.debug("wrote %s", path)
    return path
