"""Heatmap-based query initialization.

The pipeline samples multi-view features into a 3-D grid around the ego
vehicle, flattens the height axis into channels to get a bird's-eye-view map,
predicts an objectness heatmap from it, and turns the heatmap's local maxima
into the reference centers (position init) and features (feature init) of the
object queries.

Grid indexing: a grid of resolution ``(D, H, W)`` puts ``W`` cells along x,
``H`` along y and ``D`` along z. BEV arrays are indexed ``[j, i]`` with ``j``
along y and ``i`` along x.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .attention import PositionEncoder, QuerySet
from .exceptions import ShapeError
from .functional import bilinear_sample
from .geometry import CameraRig
from .layers import Conv2d, Module
from .tensor import Tensor, as_tensor, clamp, log, log_sigmoid, relu, sigmoid

logger = logging.getLogger(__name__)

GT_RADIUS = 3
NMS_WINDOW = 3
FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
# sigmoid(-2.19) ~ 0.1, a low objectness prior for a mostly empty map
HEATMAP_PRIOR_BIAS = -2.19


@dataclass(frozen=True)
class BevGridSpec:
    """Perception range and grid resolution ``(D, H, W)``."""

    x_range: Tuple[float, float]
    y_range: Tuple[float, float]
    z_range: Tuple[float, float]
    resolution: Tuple[int, int, int]

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ShapeError(f"{name} must have positive extent, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        resolution = tuple(int(n) for n in self.resolution)
        if len(resolution) != 3 or min(resolution) < 1:
            raise ShapeError(f"resolution must be three positive counts, got {self.resolution}")
        object.__setattr__(self, "resolution", resolution)

    @property
    def depth(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    @property
    def width(self) -> int:
        return self.resolution[2]

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x_range[0], self.y_range[0], self.z_range[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x_range[1], self.y_range[1], self.z_range[1]])

    @property
    def cell_size(self) -> np.ndarray:
        """``(dx, dy, dz)`` in meters."""
        return (self.upper - self.lower) / np.array([self.width, self.height, self.depth])

    @property
    def z_mid(self) -> float:
        return 0.5 * (self.z_range[0] + self.z_range[1])

    def cell_centers(self) -> np.ndarray:
        """Cell centers as a ``[D, H, W, 3]`` array of ego-frame meters."""
        dx, dy, dz = self.cell_size
        xs = self.x_range[0] + (np.arange(self.width) + 0.5) * dx
        ys = self.y_range[0] + (np.arange(self.height) + 0.5) * dy
        zs = self.z_range[0] + (np.arange(self.depth) + 0.5) * dz
        z, y, x = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def cell_of(self, xy: Sequence[float]) -> Tuple[int, int]:
        """BEV cell ``(j, i)`` holding a point; points outside are clamped to the border."""
        dx, dy, _ = self.cell_size
        i = int(np.clip(math.floor((xy[0] - self.x_range[0]) / dx), 0, self.width - 1))
        j = int(np.clip(math.floor((xy[1] - self.y_range[0]) / dy), 0, self.height - 1))
        return j, i

    def xy_of(self, j: int, i: int) -> np.ndarray:
        dx, dy, _ = self.cell_size
        return np.array([self.x_range[0] + (i + 0.5) * dx, self.y_range[0] + (j + 0.5) * dy])

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return np.all((points >= self.lower) & (points <= self.upper), axis=-1)

    def contains_bev(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)[..., :2]
        return np.all((points >= self.lower[:2]) & (points <= self.upper[:2]), axis=-1)

    def clamp(self, points: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(points, dtype=np.float64), self.lower, self.upper)


@dataclass
class Heatmap:
    """BEV objectness map.

    Attributes:
        values: ``[H, W]`` probabilities (sigmoid of ``logits`` when predicted)
        spec: Grid the map is aligned with
        logits: Pre-sigmoid values; absent for ground truth
    """

    values: Tensor
    spec: BevGridSpec
    logits: Optional[Tensor] = None

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.values.shape != (self.spec.height, self.spec.width):
            raise ShapeError(f"heatmap {self.values.shape} does not match grid {(self.spec.height, self.spec.width)}")

    def numpy(self) -> np.ndarray:
        return self.values.data


@dataclass
class ProjectedGrid:
    """Every grid cell center projected into every view.

    Attributes:
        uv: ``[V, D, H, W, 2]`` image pixel coordinates
        valid: ``[V, D, H, W]`` validity flags
        rig: Rig the projection was computed with
    """

    uv: np.ndarray
    valid: np.ndarray
    rig: CameraRig

    @property
    def n_views(self) -> int:
        return self.uv.shape[0]


def build_projected_grid(spec: BevGridSpec, rig: CameraRig) -> ProjectedGrid:
    """Project all grid cell centers through every camera of ``rig``."""
    centers = spec.cell_centers()
    uvs, valids = [], []
    for camera in rig.cameras:
        uv, _, valid = camera.project_array(centers)
        uvs.append(uv)
        valids.append(valid)
    return ProjectedGrid(np.stack(uvs), np.stack(valids), rig)


def volumetric_sample(features: Sequence[Tensor], grid: ProjectedGrid) -> Tensor:
    """
    Average bilinear samples of every valid view at each grid cell.

    Args:
        features: One ``[C, Hf, Wf]`` map per view
        grid: Projected grid of the same rig

    Returns:
        ``F_V`` of shape ``[C, D, H, W]``; cells seen by no view are zero

    Raises:
        ShapeError: If the number of maps differs from the number of views
    """
    if len(features) != grid.n_views:
        raise ShapeError(f"got {len(features)} feature maps for {grid.n_views} views")
    _, depth, height, width, _ = grid.uv.shape
    total = None
    count = np.zeros(depth * height * width)
    for camera, fmap, uv, valid in zip(grid.rig.cameras, features, grid.uv, grid.valid):
        fmap = as_tensor(fmap)
        coords = camera.to_feature_coords(uv.reshape(-1, 2), fmap.shape[1:])
        mask = valid.reshape(-1)
        samples = bilinear_sample(fmap, coords) * mask[:, None]
        total = samples if total is None else total + samples
        count += mask
    averaged = total / np.maximum(count, 1.0)[:, None]
    return averaged.reshape(depth, height, width, -1).transpose(3, 0, 1, 2)


class BevCompressor(Module):
    """Learned 1x1 convolution from ``C * D`` stacked height slices to ``C`` channels."""

    def __init__(self, channels: int, depth: int, rng: Optional[np.random.Generator] = None,
                 init: str = "uniform"):
        self.proj = Conv2d(channels * depth, channels, 1, rng, init=init)

    def __call__(self, volume: Tensor) -> Tensor:
        return compress_to_bev(volume, self)


def compress_to_bev(volume: Tensor, compressor: BevCompressor) -> Tensor:
    """Reshape ``[C, D, H, W]`` to ``[C*D, H, W]`` (channel ``c*D + d``) and project to ``[C, H, W]``."""
    channels, depth, height, width = volume.shape
    return compressor.proj(volume.reshape(channels * depth, height, width))


class HeatmapNet(Module):
    """
    Lightweight objectness predictor: three 3x3 conv layers and a 1x1 head.

    Args:
        channels: Input BEV channels
        rng: Generator for the hidden layers
        hidden: Hidden width
        head_init: ``"prior"`` (zero weights, low-objectness bias) or ``"zeros"``
    """

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None, hidden: int = 32,
                 head_init: str = "prior"):
        self.conv1 = Conv2d(channels, hidden, 3, rng)
        self.conv2 = Conv2d(hidden, hidden, 3, rng)
        self.conv3 = Conv2d(hidden, hidden, 3, rng)
        self.head = Conv2d(hidden, 1, 1, init="zeros")
        if head_init == "prior":
            self.head.bias.data[:] = HEATMAP_PRIOR_BIAS

    def __call__(self, bev: Tensor, spec: BevGridSpec) -> Heatmap:
        return heatmap_net(bev, self, spec)


def heatmap_net(bev: Tensor, net: HeatmapNet, spec: BevGridSpec) -> Heatmap:
    x = relu(net.conv1(bev))
    x = relu(net.conv2(x))
    x = relu(net.conv3(x))
    logits = net.head(x).reshape(bev.shape[1], bev.shape[2])
    return Heatmap(sigmoid(logits), spec, logits)


def _centers_of(boxes: Iterable) -> np.ndarray:
    centers = [np.asarray(getattr(box, "center", box), dtype=np.float64)[:2] for box in boxes]
    return np.asarray(centers, dtype=np.float64).reshape(-1, 2)


def draw_gt_heatmap(boxes: Iterable, spec: BevGridSpec, radius: int = GT_RADIUS) -> Heatmap:
    """
    Splat one Gaussian per box at its BEV cell; overlaps combine by maximum.

    The value at Chebyshev distance ``d`` cells from a center is
    ``exp(-d^2 / (2 sigma^2))`` with ``sigma = (2r + 1) / 6``; the center cell is 1.

    Args:
        boxes: Objects with a ``center`` attribute, or raw center coordinates
        spec: Grid to draw on
        radius: Splat radius ``r`` in cells

    Returns:
        Ground-truth heatmap with values in ``[0, 1]``
    """
    sigma = (2 * radius + 1) / 6.0
    offsets = np.arange(-radius, radius + 1)
    dist = np.maximum(np.abs(offsets)[:, None], np.abs(offsets)[None, :])
    kernel = np.exp(-(dist * dist) / (2.0 * sigma * sigma))

    values = np.zeros((spec.height, spec.width))
    for xy in _centers_of(boxes):
        j, i = spec.cell_of(xy)
        j0, j1 = max(j - radius, 0), min(j + radius + 1, spec.height)
        i0, i1 = max(i - radius, 0), min(i + radius + 1, spec.width)
        patch = kernel[j0 - j + radius:j1 - j + radius, i0 - i + radius:i1 - i + radius]
        values[j0:j1, i0:i1] = np.maximum(values[j0:j1, i0:i1], patch)
    return Heatmap(Tensor(values), spec)


def _focal_terms(target: np.ndarray):
    positive = target == 1.0
    n_pos = max(int(positive.sum()), 1)
    negative_weight = np.where(positive, 0.0, (1.0 - target) ** FOCAL_BETA)
    return positive.astype(np.float64), negative_weight, n_pos


def _target_array(pred_shape, target) -> np.ndarray:
    if isinstance(target, Heatmap):
        target = target.values.data
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if target.shape != tuple(pred_shape):
        raise ShapeError(f"heatmap shapes differ: {tuple(pred_shape)} vs {target.shape}")
    return target


def gaussian_focal_loss(pred, target, alpha: float = FOCAL_ALPHA) -> Tensor:
    """
    Penalty-reduced focal loss of predicted probabilities against a Gaussian target.

    ``L = -(1/N_pos) sum[y == 1: (1-p)^a log p ; else: (1-y)^b p^a log(1-p)]``.

    Args:
        pred: Probabilities in ``(0, 1)``, a tensor or a :class:`Heatmap`
        target: Ground truth in ``[0, 1]``, same shape

    Raises:
        ShapeError: If the shapes differ
    """
    p = pred.values if isinstance(pred, Heatmap) else as_tensor(pred)
    target = _target_array(p.shape, target)
    positive, negative_weight, n_pos = _focal_terms(target)
    p = clamp(p, 1e-12, 1.0 - 1e-12)
    pos_term = (1.0 - p) ** alpha * log(p) * positive
    neg_term = p ** alpha * log(1.0 - p) * negative_weight
    return (pos_term.sum() + neg_term.sum()) * (-1.0 / n_pos)


def gaussian_focal_loss_with_logits(logits, target, alpha: float = FOCAL_ALPHA) -> Tensor:
    """Same loss as :func:`gaussian_focal_loss` computed from logits with stable log-sigmoids."""
    x = logits.logits if isinstance(logits, Heatmap) else as_tensor(logits)
    target = _target_array(x.shape, target)
    positive, negative_weight, n_pos = _focal_terms(target)
    p = sigmoid(x)
    pos_term = (1.0 - p) ** alpha * log_sigmoid(x) * positive
    neg_term = p ** alpha * log_sigmoid(-x) * negative_weight
    return (pos_term.sum() + neg_term.sum()) * (-1.0 / n_pos)


@dataclass(frozen=True)
class Selection:
    """One heatmap peak: cell ``(j, i)``, its metric BEV center and its score."""

    cell: Tuple[int, int]
    xy: Tuple[float, float]
    score: float


def nms_topk(heatmap, spec: BevGridSpec, window: int = NMS_WINDOW, k: int = 900) -> List[Selection]:
    """
    Keep cells that are the maximum of their ``window x window`` neighborhood.

    Ties go to the smaller flattened index. Survivors are ordered by score
    (descending, then flattened index) and the first ``k`` are returned.

    Raises:
        ShapeError: If ``window`` is even or ``k`` is not positive
    """
    if window < 1 or window % 2 == 0:
        raise ShapeError(f"NMS window must be odd, got {window}")
    if k < 1:
        raise ShapeError(f"k must be positive, got {k}")
    scores = heatmap.values.data if isinstance(heatmap, Heatmap) else np.asarray(
        heatmap.data if isinstance(heatmap, Tensor) else heatmap, dtype=np.float64)
    height, width = scores.shape
    flat_index = np.arange(height * width).reshape(height, width)
    half = window // 2
    padded = np.pad(scores, half, constant_values=-np.inf)
    padded_index = np.pad(flat_index, half, constant_values=-1)

    keep = np.ones_like(scores, dtype=bool)
    for dj in range(window):
        for di in range(window):
            if dj == half and di == half:
                continue
            other = padded[dj:dj + height, di:di + width]
            other_index = padded_index[dj:dj + height, di:di + width]
            beaten = (other > scores) | ((other == scores) & (other_index < flat_index) & (other_index >= 0))
            keep &= ~beaten

    js, is_ = np.nonzero(keep)
    flat = flat_index[js, is_]
    order = np.lexsort((flat, -scores[js, is_]))[:k]
    selections = []
    for idx in order:
        j, i = int(js[idx]), int(is_[idx])
        xy = spec.xy_of(j, i)
        selections.append(Selection((j, i), (float(xy[0]), float(xy[1])), float(scores[j, i])))
    return selections


def _pad_selections(selected: Sequence[Selection], n_query: int) -> Tuple[List[Selection], np.ndarray]:
    if not selected:
        raise ShapeError("query initialization needs at least one selected cell")
    chosen = list(selected[:n_query])
    padded = np.zeros(n_query, dtype=bool)
    if len(chosen) < n_query:
        logger.debug("padding %d selections up to %d queries", len(chosen), n_query)
        base = len(chosen)
        for index in range(base, n_query):
            chosen.append(chosen[(index - base) % base])
        padded[base:] = True
    return chosen, padded


def init_queries(selected: Sequence[Selection], bev: Tensor, pos_encoder: PositionEncoder, z_default: float,
                 n_query: Optional[int] = None, feature_embedding: Optional[Tensor] = None) -> QuerySet:
    """
    Build object queries from heatmap peaks.

    Centers are ``(x, y, z_default)``. Features are ``bev[:, j, i]`` at each
    selected cell, or the learned ``feature_embedding`` rows when given.
    Fewer peaks than ``n_query`` are padded by cycling from the highest score.

    Args:
        selected: Output of :func:`nms_topk`
        bev: ``F_BEV`` of shape ``[C, H, W]``
        pos_encoder: Center-to-encoding map
        z_default: Height assigned to every center
        n_query: Number of queries; defaults to ``len(selected)``
        feature_embedding: ``[n_query, C]`` learned features (feature init off)

    Raises:
        ShapeError: If ``selected`` is empty
    """
    n_query = n_query or len(selected)
    chosen, padded = _pad_selections(selected, n_query)
    centers = np.array([[s.xy[0], s.xy[1], z_default] for s in chosen])
    js = np.array([s.cell[0] for s in chosen])
    is_ = np.array([s.cell[1] for s in chosen])
    if feature_embedding is not None:
        features = feature_embedding
    else:
        features = bev[:, js, is_].transpose(1, 0)
    return QuerySet(features, centers, pos_encoder(centers), padded)


def random_reference_centers(spec: BevGridSpec, n_query: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws in the perception range, used when position init is off."""
    xy = rng.uniform(spec.lower[:2], spec.upper[:2], size=(n_query, 2))
    return np.concatenate([xy, np.full((n_query, 1), spec.z_mid)], axis=1)


def init_queries_at(centers: np.ndarray, bev: Tensor, spec: BevGridSpec, pos_encoder: PositionEncoder,
                    feature_embedding: Optional[Tensor] = None) -> QuerySet:
    """Queries at fixed reference centers; features from their BEV cells unless an embedding is given."""
    centers = np.asarray(centers, dtype=np.float64)
    if feature_embedding is not None:
        features = feature_embedding
    else:
        cells = np.array([spec.cell_of(c[:2]) for c in centers])
        features = bev[:, cells[:, 0], cells[:, 1]].transpose(1, 0)
    return QuerySet(features, centers, pos_encoder(centers))


def query_hits(selected: Sequence[Selection], boxes: Iterable, spec: BevGridSpec) -> Tuple[int, int]:
    """Count ground-truth centers whose cell is within one cell (Chebyshev) of a selection."""
    gt_cells = [spec.cell_of(xy) for xy in _centers_of(boxes)]
    if not gt_cells:
        return 0, 0
    chosen = np.array([s.cell for s in selected]).reshape(-1, 2)
    hits = 0
    for cell in gt_cells:
        if len(chosen) and np.min(np.max(np.abs(chosen - np.asarray(cell)), axis=1)) <= 1:
            hits += 1
    return hits, len(gt_cells)


def query_recall(selected: Sequence[Selection], boxes: Iterable, spec: BevGridSpec) -> float:
    """Fraction of ground-truth centers covered by a selected query; 1.0 without ground truth."""
    hits, total = query_hits(selected, boxes, spec)
    return hits / total if total else 1.0
