"""
Decoder stack, detection head, set matching and the training loss.

Each decoder layer runs temporal self-attention, projective cross-attention
(single- or cross-frame) and a feed-forward block, each with a residual
connection and layer normalization. A head after every layer predicts class
logits and a 10-value box regression
``[dx, dy, dz, log w, log l, log h, sin, cos - 1, vx, vy]``; the predicted
center delta, bounded by ``trust_region * tanh``, refines the query centers
for the next layer.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .attention import (MhaWeights, PcaWeights, PositionEncoder, QuerySet, Sca2dWeights, pca_cross_frame,
                        pca_forward, sca2d_forward, temporal_self_attention)
from .bev_init import (BevCompressor, BevGridSpec, Heatmap, HeatmapNet, ProjectedGrid, Selection,
                       build_projected_grid, draw_gt_heatmap, gaussian_focal_loss_with_logits, init_queries,
                       init_queries_at, nms_topk, random_reference_centers, volumetric_sample)
from .exceptions import CheckpointError, ConfigError, GeometryError, NonFiniteError, ShapeError, TrainingDivergedError
from .layers import LayerNorm, LinearMap, Module, TinyEncoder
from .optim import AdamW
from .temporal import FrameRecord, TemporalConfig
from .tensor import Tensor, abs_, as_tensor, concat, log_sigmoid, no_grad, parameter, relu, sigmoid, tanh
from .tensor_io import load_tensor, save_tensor

logger = logging.getLogger(__name__)

REG_DIM = 10
# sigmoid(-4.595) ~ 0.01
CLASS_PRIOR_BIAS = -4.595
CHECKPOINT_FORMAT = "projdet-checkpoint"
CHECKPOINT_VERSION = 1


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to ``(-pi, pi]``."""
    return -((-float(yaw) + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass
class Box3D:
    """
    Oriented 3-D box in the ego frame.

    Attributes:
        center: ``(x, y, z)`` meters
        size: ``(w, l, h)`` meters, strictly positive
        yaw: Heading in ``(-pi, pi]``
        velocity: ``(vx, vy)`` m/s
        class_id: Class index
        score: Confidence in ``[0, 1]``
        class_scores: Per-class probabilities, for predictions
    """

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    class_id: int = 0
    score: float = 1.0
    class_scores: Optional[np.ndarray] = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(2)
        if not np.all(self.size > 0.0):
            raise GeometryError(f"box size must be positive, got {self.size}")
        self.yaw = normalize_yaw(self.yaw)
        self.class_id = int(self.class_id)
        self.score = float(self.score)

    def to_dict(self) -> Dict[str, Any]:
        return {"center": self.center.tolist(), "size": self.size.tolist(), "yaw": self.yaw,
                "velocity": self.velocity.tolist(), "class_id": self.class_id, "score": self.score}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Box3D":
        return cls(data["center"], data["size"], data.get("yaw", 0.0), data.get("velocity", (0.0, 0.0)),
                   data.get("class_id", 0), data.get("score", 1.0))


@dataclass
class DecoderConfig:
    """Model hyperparameters. Desk-scale defaults."""

    layers: int = 2
    channels: int = 32
    heads: int = 4
    points: int = 4
    n_query: int = 25
    n_classes: int = 3
    ffn: int = 64
    levels: int = 1
    heatmap_hidden: int = 32
    attn: str = "pca"
    position_init: bool = True
    feature_init: bool = True
    use_encoder: bool = False
    encoder_hidden: int = 32
    nms_window: int = 3
    gt_radius: int = 3
    trust_region: float = 4.0
    cls_weight: float = 2.0
    reg_weight: float = 0.25
    heatmap_weight: float = 1.0
    match_cls_weight: float = 2.0
    match_center_weight: float = 0.25
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"model needs at least one decoder layer, got {self.layers}")
        if self.heads < 1 or self.channels % self.heads != 0:
            raise ConfigError(f"{self.heads} heads do not divide {self.channels} channels")
        if self.attn not in ("pca", "sca2d"):
            raise ConfigError(f"unknown cross-attention '{self.attn}'")
        if self.n_query < 1:
            raise ConfigError("n_query must be positive")
        if self.levels < 1 or (self.attn == "sca2d" and self.levels != 1):
            raise ConfigError(f"{self.levels} feature levels not supported with '{self.attn}' attention")


@dataclass
class FrameContext:
    """Everything a decoder layer reads besides the query state."""

    features: List[Tensor]
    rig: Any
    ego_pose: Any
    past: Optional[FrameRecord] = None
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    levels: int = 1

    def attention_features(self, past: bool = False) -> Optional[Sequence]:
        """Current or past features as the cross-attention expects them, one pyramid level per scale."""
        if past:
            if self.past is None:
                return None
            return feature_pyramid(self.past.features, self.levels)
        return feature_pyramid(self.features, self.levels)


def feature_pyramid(maps: Sequence[Tensor], levels: int) -> Sequence:
    """
    Per-level lists of per-view maps; level ``l`` is level ``l - 1`` average-pooled 2x2.

    With one level the maps are returned unchanged. Odd trailing rows or
    columns are dropped before pooling.
    """
    if levels == 1:
        return list(maps)
    pyramid = [list(maps)]
    for _ in range(levels - 1):
        pooled = []
        for fmap in pyramid[-1]:
            c, h, w = fmap.shape
            if h < 2 or w < 2:
                raise ShapeError(f"feature map {fmap.shape} too small for {levels} levels")
            h2, w2 = h // 2, w // 2
            cropped = fmap[:, :h2 * 2, :w2 * 2]
            pooled.append(cropped.reshape(c, h2, 2, w2, 2).mean(axis=(2, 4)))
        pyramid.append(pooled)
    return pyramid


@dataclass
class LayerOutput:
    """Head outputs of one decoder layer.

    Attributes:
        cls_logits: ``[N_q, K]``
        reg: ``[N_q, 10]`` raw regression
        centers: ``[N_q, 3]`` reference centers the regression is relative to
        trust_region: Center delta bound in meters
    """

    cls_logits: Tensor
    reg: Tensor
    centers: np.ndarray
    trust_region: float = 4.0
    used_past: bool = False

    def boxes(self) -> List[Box3D]:
        return decode_boxes(self.cls_logits.data, self.reg.data, self.centers, self.trust_region)

    def regression_vector(self) -> Tensor:
        """Differentiable ``[center(3), log size(3), sin, cos, vx, vy]`` per query."""
        center = tanh(self.reg[:, 0:3]) * self.trust_region + self.centers
        rest = self.reg[:, 3:REG_DIM] + np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        return concat([center, rest], axis=1)


class DecoderLayer(Module):
    def __init__(self, config: DecoderConfig, rng: Optional[np.random.Generator] = None):
        c = config.channels
        self.tsa = MhaWeights(c, config.heads, rng)
        self.norm1 = LayerNorm(c)
        if config.attn == "sca2d":
            self.cross = Sca2dWeights(c, config.heads, config.points, rng)
        else:
            self.cross = PcaWeights(c, config.heads, config.points, rng, levels=config.levels)
        self.norm2 = LayerNorm(c)
        self.ffn1 = LinearMap(c, config.ffn, rng)
        self.ffn2 = LinearMap(config.ffn, c, rng)
        self.norm3 = LayerNorm(c)
        self.cls_head = LinearMap(c, config.n_classes, rng)
        self.cls_head.bias.data[:] = CLASS_PRIOR_BIAS
        self.reg_head = LinearMap(c, REG_DIM, init="zeros")
        self._attn = config.attn
        self._trust_region = config.trust_region

    def __call__(self, state: QuerySet, ctx: FrameContext, pos_encoder: PositionEncoder,
                 spec: BevGridSpec) -> Tuple[QuerySet, LayerOutput]:
        return decoder_layer(state, ctx, self, pos_encoder, spec)


def decoder_layer(state: QuerySet, ctx: FrameContext, layer: DecoderLayer, pos_encoder: PositionEncoder,
                  spec: BevGridSpec) -> Tuple[QuerySet, LayerOutput]:
    """
    One decoder layer: TSA, cross-attention and FFN, then the heads.

    Returns:
        ``(next_state, output)``; ``next_state`` has refined, clamped and
        detached centers with recomputed positional encodings
    """
    temporal = ctx.temporal
    past = ctx.past if temporal.enabled else None
    past_queries = past.queries if past is not None and temporal.query_aggregation else None
    past_pose = past.ego_pose if past is not None else None

    x = state.features
    attended = temporal_self_attention(state, past_queries, ctx.ego_pose, past_pose, layer.tsa, pos_encoder,
                                       temporal.ego_align)
    x = layer.norm1(x + attended)
    current = QuerySet(x, state.centers, state.pos_enc, state.padded)

    used_past = False
    if layer._attn == "sca2d":
        gathered = sca2d_forward(current, ctx.features, ctx.rig, layer.cross)
    elif past is not None and temporal.feature_aggregation:
        details = pca_cross_frame(current, ctx.attention_features(), ctx.attention_features(past=True), ctx.rig,
                                  past.rig, ctx.ego_pose, past.ego_pose, layer.cross, temporal.ego_align,
                                  return_details=True)
        gathered, used_past = details.output, details.used_past
    else:
        gathered = pca_forward(current, ctx.attention_features(), ctx.rig, layer.cross)
    x = layer.norm2(x + gathered)
    x = layer.norm3(x + layer.ffn2(relu(layer.ffn1(x))))

    cls_logits = layer.cls_head(x)
    reg = layer.reg_head(x)
    output = LayerOutput(cls_logits, reg, state.centers.copy(), layer._trust_region, used_past)

    delta = np.tanh(reg.data[:, 0:3]) * layer._trust_region
    centers = spec.clamp(state.centers + delta)
    return QuerySet(x, centers, pos_encoder(centers), state.padded), output


def decode_boxes(cls_logits: np.ndarray, reg: np.ndarray, centers: np.ndarray,
                 trust_region: float = 4.0) -> List[Box3D]:
    """
    Turn raw head outputs into boxes.

    ``center = c + trust_region * tanh(d)``, ``size = exp(raw)``,
    ``yaw = atan2(sin, 1 + raw_cos)``, velocity raw, ``score = sigmoid(max logit)``.
    """
    cls_logits = np.asarray(cls_logits, dtype=np.float64)
    reg = np.asarray(reg, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    probabilities = 1.0 / (1.0 + np.exp(-cls_logits))
    boxes = []
    for n in range(reg.shape[0]):
        r = reg[n]
        class_id = int(np.argmax(cls_logits[n]))
        boxes.append(Box3D(center=centers[n] + trust_region * np.tanh(r[0:3]),
                           size=np.exp(r[3:6]),
                           yaw=math.atan2(r[6], 1.0 + r[7]),
                           velocity=r[8:10],
                           class_id=class_id,
                           score=float(probabilities[n, class_id]),
                           class_scores=probabilities[n].copy()))
    return boxes


def match_cost(pred: Sequence[Box3D], gt: Sequence[Box3D], cls_weight: float = 2.0,
               center_weight: float = 0.25) -> np.ndarray:
    """``cls_weight * (1 - p_class) + center_weight * |BEV center difference|_1`` per (pred, gt)."""
    cost = np.zeros((len(pred), len(gt)))
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            if p.class_scores is not None and g.class_id < len(p.class_scores):
                prob = p.class_scores[g.class_id]
            else:
                prob = p.score if p.class_id == g.class_id else 0.0
            cost[i, j] = cls_weight * (1.0 - prob) + center_weight * np.abs(p.center[:2] - g.center[:2]).sum()
    return cost


def assign(cost: np.ndarray) -> List[Tuple[int, int]]:
    """
    Minimum-cost one-to-one assignment of rows (predictions) to columns (ground truth).

    Raises:
        NonFiniteError: If any cost is NaN or infinite
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise NonFiniteError("matching costs must be finite")
    rows, cols = linear_sum_assignment(cost)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols))


def hungarian_match(pred: Sequence[Box3D], gt: Sequence[Box3D], cls_weight: float = 2.0,
                    center_weight: float = 0.25) -> List[Tuple[int, int]]:
    """
    Match predictions to ground truth; unmatched predictions are background.

    Returns:
        ``(pred_index, gt_index)`` pairs, sorted by prediction index
    """
    return assign(match_cost(pred, gt, cls_weight, center_weight))


def sigmoid_focal_loss(logits: Tensor, targets: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Summed binary focal loss over every (query, class) entry."""
    targets = np.asarray(targets, dtype=np.float64)
    p = sigmoid(logits)
    positive = (1.0 - p) ** gamma * log_sigmoid(logits) * (alpha * targets)
    negative = p ** gamma * log_sigmoid(logits * -1.0) * ((1.0 - alpha) * (1.0 - targets))
    return (positive + negative).sum() * -1.0


def regression_target(box: Box3D, use_velocity: bool) -> np.ndarray:
    target = np.concatenate([box.center, np.log(box.size), [math.sin(box.yaw), math.cos(box.yaw)], box.velocity])
    return target if use_velocity else target[:8]


def layer_loss(output: LayerOutput, gt: Sequence[Box3D], config: DecoderConfig,
               use_velocity: bool) -> Tuple[Tensor, Tensor]:
    """Classification and regression terms of one layer, normalized by the ground-truth count."""
    pairs = hungarian_match(output.boxes(), gt, config.match_cls_weight, config.match_center_weight)
    n_q, n_classes = output.cls_logits.shape
    normalizer = float(max(len(gt), 1))

    targets = np.zeros((n_q, n_classes))
    for p, g in pairs:
        targets[p, gt[g].class_id] = 1.0
    cls_loss = sigmoid_focal_loss(output.cls_logits, targets, config.focal_alpha, config.focal_gamma) * (
        1.0 / normalizer)

    if not pairs:
        return cls_loss, Tensor(0.0)
    width = REG_DIM if use_velocity else 8
    pred_rows = np.array([p for p, _ in pairs])
    predicted = output.regression_vector()[pred_rows, 0:width]
    target = np.stack([regression_target(gt[g], use_velocity) for _, g in pairs])
    reg_loss = abs_(predicted - target).sum()
    return cls_loss, reg_loss * (1.0 / normalizer)


def detection_loss(outputs: Sequence[LayerOutput], gt: Sequence[Box3D], heatmap_loss: Optional[Tensor],
                   config: DecoderConfig, use_velocity: bool = False) -> Tuple[Tensor, Dict[str, float]]:
    """
    Deep-supervised set loss plus the weighted heatmap term.

    ``total = sum_layers (w_cls * focal + w_reg * L1) + w_hm * L_heatmap``

    Returns:
        ``(total, components)`` with components ``cls``, ``reg``, ``heatmap`` and ``total``
    """
    total = Tensor(0.0)
    cls_sum, reg_sum = 0.0, 0.0
    for output in outputs:
        cls_loss, reg_loss = layer_loss(output, gt, config, use_velocity)
        total = total + cls_loss * config.cls_weight + reg_loss * config.reg_weight
        cls_sum += cls_loss.item()
        reg_sum += reg_loss.item()
    hm_value = 0.0
    if heatmap_loss is not None:
        total = total + heatmap_loss * config.heatmap_weight
        hm_value = heatmap_loss.item()
    components = {"cls": cls_sum, "reg": reg_sum, "heatmap": hm_value, "total": total.item()}
    return total, components


@dataclass
class ModelOutput:
    """Result of one detector forward pass."""

    layers: List[LayerOutput]
    heatmap: Heatmap
    bev: Tensor
    selections: List[Selection]
    queries: QuerySet

    @property
    def final(self) -> LayerOutput:
        return self.layers[-1]


class Detector(Module):
    """
    Full model: optional encoder, heatmap query initialization and the decoder.

    Args:
        config: Model hyperparameters
        spec: BEV grid and perception range
        in_channels: Channels of the rendered feature maps
        rng: Generator for weight initialization
        temporal: Temporal fusion switches
    """

    def __init__(self, config: DecoderConfig, spec: BevGridSpec, in_channels: int,
                 rng: Optional[np.random.Generator] = None, temporal: Optional[TemporalConfig] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        c = config.channels
        if config.use_encoder:
            self.encoder = TinyEncoder(in_channels, c, rng, config.encoder_hidden)
        elif in_channels != c:
            raise ConfigError(f"feature maps carry {in_channels} channels but the model expects {c}; "
                              f"enable the encoder or match the widths")
        self.compressor = BevCompressor(c, spec.depth, rng)
        self.heatmap_net = HeatmapNet(c, rng, config.heatmap_hidden)
        self.pos_encoder = PositionEncoder(c, spec.lower, spec.upper, rng)
        self.query_embedding = parameter(rng.normal(0.0, 1.0, size=(config.n_query, c)))
        self.layers = [DecoderLayer(config, rng) for _ in range(config.layers)]
        self._config = config
        self._spec = spec
        self._temporal = temporal or TemporalConfig()
        self._reference_centers = random_reference_centers(spec, config.n_query, rng)
        self._grids: Dict[int, Tuple[Any, ProjectedGrid]] = {}

    @property
    def config(self) -> DecoderConfig:
        return self._config

    @property
    def spec(self) -> BevGridSpec:
        return self._spec

    @property
    def temporal(self) -> TemporalConfig:
        return self._temporal

    def projected_grid(self, rig) -> ProjectedGrid:
        cached = self._grids.get(id(rig))
        if cached is None or cached[0] is not rig:
            cached = (rig, build_projected_grid(self._spec, rig))
            self._grids[id(rig)] = cached
        return cached[1]

    def compute_features(self, frame) -> List[Tensor]:
        """Per-view feature maps of a frame, through the encoder when one is configured."""
        maps = [as_tensor(m) for m in frame.feature_maps]
        encoder = getattr(self, "encoder", None)
        if encoder is not None:
            maps = [encoder(m) for m in maps]
        return maps

    def initial_queries(self, bev: Tensor, heatmap: Heatmap) -> Tuple[QuerySet, List[Selection]]:
        config = self._config
        embedding = None if config.feature_init else self.query_embedding
        selections = nms_topk(heatmap, self._spec, config.nms_window, config.n_query)
        if config.position_init:
            queries = init_queries(selections, bev, self.pos_encoder, self._spec.z_mid, config.n_query, embedding)
        else:
            queries = init_queries_at(self._reference_centers, bev, self._spec, self.pos_encoder, embedding)
        return queries, selections

    def forward(self, frame, features: Optional[List[Tensor]] = None,
                past: Optional[FrameRecord] = None) -> ModelOutput:
        """
        Run the model on one frame.

        Args:
            frame: Object with ``feature_maps``, ``rig`` and ``ego_pose``
            features: Precomputed per-view features; computed when omitted
            past: Cached previous frame, used only when temporal fusion is enabled

        Returns:
            ModelOutput with one LayerOutput per decoder layer
        """
        if features is None:
            features = self.compute_features(frame)
        grid = self.projected_grid(frame.rig)
        bev = self.compressor(volumetric_sample(features, grid))
        heatmap = self.heatmap_net(bev, self._spec)
        state, selections = self.initial_queries(bev, heatmap)

        ctx = FrameContext(features, frame.rig, frame.ego_pose, past if self._temporal.enabled else None,
                           self._temporal, self._config.levels)
        outputs = []
        for layer in self.layers:
            state, output = layer(state, ctx, self.pos_encoder, self._spec)
            outputs.append(output)
        return ModelOutput(outputs, heatmap, bev, selections, state)

    __call__ = forward

    def make_record(self, frame, features: List[Tensor], output: ModelOutput) -> FrameRecord:
        """Cache a processed frame. The record holds copies, so later edits to the frame do not reach it."""
        snapshot = [Tensor(np.array(f.data)) for f in features]
        return FrameRecord(frame.ego_pose.timestamp, output.queries.detach(), snapshot,
                           frame.ego_pose, frame.rig)

    def predict(self, frame, past: Optional[FrameRecord] = None, score_floor: float = 0.0,
                features: Optional[List[Tensor]] = None) -> List[Box3D]:
        """Final-layer boxes scoring at least ``score_floor``."""
        with no_grad():
            output = self.forward(frame, features, past)
        return [box for box in output.final.boxes() if box.score >= score_floor]

    def loss(self, frame, output: ModelOutput) -> Tuple[Tensor, Dict[str, float]]:
        gt_map = draw_gt_heatmap(frame.boxes, self._spec, self._config.gt_radius)
        hm_loss = gaussian_focal_loss_with_logits(output.heatmap.logits, gt_map)
        use_velocity = self._temporal.enabled
        return detection_loss(output.layers, frame.boxes, hm_loss, self._config, use_velocity)


@dataclass
class TrainSample:
    """A current frame and, for temporal training, one earlier frame."""

    frame: Any
    past: Optional[Any] = None


@dataclass
class LossReport:
    step: int
    total: float
    components: Dict[str, float]
    grad_norm: float


def past_record(detector: Detector, past_frame) -> FrameRecord:
    """Run the previous frame without gradient tracking and cache its outputs."""
    with no_grad():
        features = detector.compute_features(past_frame)
        output = detector.forward(past_frame, features, None)
        return detector.make_record(past_frame, features, output)


def train_step(detector: Detector, batch: Sequence[TrainSample], optimizer: AdamW, step: int = 0) -> LossReport:
    """
    One optimizer step over a batch, averaging the per-sample losses.

    Raises:
        TrainingDivergedError: If any sample's loss is not finite
    """
    optimizer.zero_grad()
    scale = 1.0 / max(len(batch), 1)
    totals: Dict[str, float] = {}
    for sample in batch:
        record = None
        if detector.temporal.enabled and sample.past is not None:
            record = past_record(detector, sample.past)
        output = detector.forward(sample.frame, None, record)
        loss, components = detector.loss(sample.frame, output)
        if not np.isfinite(components["total"]):
            raise TrainingDivergedError(f"non-finite loss at step {step}", step=step, components=components)
        (loss * scale).backward()
        for key, value in components.items():
            totals[key] = totals.get(key, 0.0) + value * scale
    grad_norm = optimizer.step()
    optimizer.zero_grad()
    return LossReport(step, totals.get("total", 0.0), totals, grad_norm)


def save_checkpoint(detector: Detector, directory: str, fingerprint: str = "",
                    extra: Optional[Dict[str, Any]] = None) -> str:
    """
    Write every parameter as a tensor file plus ``manifest.json``.

    Returns:
        Path of the manifest

    Raises:
        CheckpointError: If a file cannot be written
    """
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise CheckpointError(f"Failed to create checkpoint directory {directory}: {str(e)}")
    entries = []
    tensors = list(detector.named_parameters())
    tensors.append(("buffer.reference_centers", Tensor(detector._reference_centers)))
    for name, tensor in tensors:
        filename = f"{name}.tensor"
        save_tensor(os.path.join(directory, filename), tensor)
        entries.append({"name": name, "file": filename, "shape": list(tensor.shape)})
    manifest = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "config_hash": fingerprint,
                "tensors": entries, "extra": extra or {}}
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except IOError as e:
        raise CheckpointError(f"Failed to write manifest {path}: {str(e)}")
    logger.info("wrote checkpoint with %d tensors to %s", len(entries), directory)
    return path


def load_checkpoint(detector: Detector, directory: str, fingerprint: Optional[str] = None) -> Dict[str, Any]:
    """
    Restore parameters written by :func:`save_checkpoint`.

    Args:
        detector: Model built from the same configuration
        directory: Checkpoint directory
        fingerprint: When given, must equal the manifest's config hash

    Returns:
        The manifest

    Raises:
        CheckpointError: On unreadable files, a config hash mismatch, or
            names and shapes that do not match the model
    """
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except (IOError, ValueError) as e:
        raise CheckpointError(f"Failed to read manifest {path}: {str(e)}")
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} manifest")
    if fingerprint is not None and manifest.get("config_hash") != fingerprint:
        raise CheckpointError("checkpoint was written for a different configuration")

    state = {}
    for entry in manifest["tensors"]:
        array = load_tensor(os.path.join(directory, entry["file"])).data
        if list(array.shape) != list(entry["shape"]):
            raise CheckpointError(f"tensor '{entry['name']}' has shape {array.shape}, manifest says {entry['shape']}")
        state[entry["name"]] = array
    centers = state.pop("buffer.reference_centers", None)
    detector.load_state_dict(state, strict=True)
    if centers is not None:
        detector._reference_centers = centers
    return manifest
