"""Projective cross-attention, its 2-D-offset baseline, and temporal self-attention.

Projective cross-attention (PCA) predicts 3-D sampling offsets around each
query's reference center, projects the offset points into every camera, and
aggregates value-projected bilinear samples with softmax attention weights.
The cross-frame variant runs the same weights against the current and the
ego-motion-aligned previous frame and averages the two results.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .exceptions import ShapeError
from .functional import bilinear_sample, softmax
from .geometry import CameraRig, EgoPose, align_center_to_now, align_center_to_past, project_points
from .layers import LinearMap, Module
from .tensor import Tensor, concat, einsum, stack

logger = logging.getLogger(__name__)

FeatureInput = Union[Sequence[Tensor], Sequence[Sequence[Tensor]]]


@dataclass
class QuerySet:
    """Object queries: features ``q``, reference centers ``c`` and positional encodings.

    Attributes:
        features: ``[N_q, C]``
        centers: ``[N_q, 3]`` ego-frame meters
        pos_enc: ``[N_q, C]``
        padded: ``[N_q]`` flags marking entries repeated to reach the query count
    """

    features: Tensor
    centers: np.ndarray
    pos_enc: Tensor
    padded: np.ndarray = field(default=None)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        if self.padded is None:
            self.padded = np.zeros(len(self.centers), dtype=bool)
        n = len(self.centers)
        if self.features.shape[0] != n or self.pos_enc.shape[0] != n:
            raise ShapeError(f"query parts disagree: {self.features.shape}, {self.centers.shape}, {self.pos_enc.shape}")

    @property
    def n_queries(self) -> int:
        return len(self.centers)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def detach(self) -> "QuerySet":
        return QuerySet(self.features.detach(), self.centers.copy(), self.pos_enc.detach(), self.padded.copy())


class PositionEncoder(Module):
    """Linear projection of range-normalized 3-D centers to ``C`` channels."""

    def __init__(self, channels: int, lower: Sequence[float], upper: Sequence[float],
                 rng: Optional[np.random.Generator] = None):
        self.proj = LinearMap(3, channels, rng)
        self._lower = np.asarray(lower, dtype=np.float64)
        self._upper = np.asarray(upper, dtype=np.float64)

    def normalize(self, centers: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(centers) - self._lower) / (self._upper - self._lower) - 1.0

    def __call__(self, centers: np.ndarray) -> Tensor:
        return self.proj(Tensor(self.normalize(centers)))


class PcaWeights(Module):
    """
    Learnable parts of projective cross-attention.

    Args:
        channels: Feature width ``C``
        heads: ``N_h``; must divide ``C``
        points: ``N_s`` sampling points per head
        rng: Generator for initialization
        levels: Number of feature levels (1 = single scale)

    Raises:
        ShapeError: If ``heads`` does not divide ``channels``
    """

    def __init__(self, channels: int, heads: int, points: int, rng: Optional[np.random.Generator] = None,
                 levels: int = 1):
        if heads < 1 or channels % heads != 0:
            raise ShapeError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.points = points
        self.levels = levels
        self.channels = channels
        self.value_proj = LinearMap(channels, channels, rng)
        self.output_proj = LinearMap(channels, channels, rng)
        # zero offsets: training starts from center sampling
        self.offset_head = LinearMap(channels, heads * levels * points * 3, init="zeros")
        self.attn_head = LinearMap(channels, heads * levels * points, rng)


@dataclass
class AttentionDetails:
    """Intermediate values of one cross-attention call, for inspection and tests."""

    output: Tensor
    attention: np.ndarray
    sample_points: np.ndarray
    valid_views: np.ndarray
    used_past: bool = False


def _as_levels(features: FeatureInput, levels: int, n_views: int) -> List[List[Tensor]]:
    if levels == 1 and len(features) and isinstance(features[0], Tensor):
        grouped = [list(features)]
    else:
        grouped = [list(level) for level in features]
    if len(grouped) != levels:
        raise ShapeError(f"expected {levels} feature levels, got {len(grouped)}")
    for level in grouped:
        if len(level) != n_views:
            raise ShapeError(f"got {len(level)} feature maps for {n_views} views")
    return grouped


def _value_heads(weights, samples: Tensor, heads: int) -> Tensor:
    """Per-head value projection ``W_h`` of samples shaped ``[N_q, N_h, N_s, C]``."""
    channels = weights.value_proj.in_features
    head_dim = channels // heads
    w = weights.value_proj.weight.reshape(heads, head_dim, channels)
    out = einsum("qhsc,hdc->qhsd", samples, w)
    if weights.value_proj.bias is not None:
        out = out + weights.value_proj.bias.reshape(1, heads, 1, head_dim)
    return out


def pca_forward(queries: QuerySet, features: FeatureInput, rig: CameraRig, weights: PcaWeights,
                centers: Optional[np.ndarray] = None, return_details: bool = False):
    """
    Projective cross-attention of object queries into multi-view features.

    Per query, offsets ``Δc_hs`` are predicted from ``q + pos_enc``; each point
    ``c + Δc_hs`` is projected into every view, sampled bilinearly, value
    projected with ``W_h`` and averaged over the views where it lands
    (zero when none). Softmax weights ``A_hs`` combine the samples of each head,
    heads are concatenated and passed through the output projection.

    Args:
        queries: Query features, centers and positional encodings
        features: Per-view ``[C, H, W]`` tensors, or per-level lists of them
        rig: Cameras the features were computed from
        weights: Learnable parts
        centers: Reference centers overriding ``queries.centers``
        return_details: Also return attention weights and sampling points

    Returns:
        ``[N_q, C]`` tensor, or :class:`AttentionDetails` when requested
    """
    levels = _as_levels(features, weights.levels, rig.n_views)
    n_q, channels = queries.n_queries, weights.channels
    heads, points, n_levels = weights.heads, weights.points, weights.levels
    head_dim = channels // heads
    centers = queries.centers if centers is None else np.asarray(centers, dtype=np.float64)

    q = queries.features + queries.pos_enc
    offsets = weights.offset_head(q).reshape(n_q, heads, n_levels, points, 3)
    logits = weights.attn_head(q).reshape(n_q, heads, n_levels * points)
    attention = softmax(logits, axis=-1).reshape(n_q, heads, n_levels, points)
    sample_points = offsets + centers.reshape(n_q, 1, 1, 1, 3)

    per_level = []
    valid_views = np.zeros((n_levels, n_q, heads, points), dtype=np.int64)
    for level_index, level_maps in enumerate(levels):
        flat_points = sample_points[:, :, level_index].reshape(-1, 3)
        uv_views, valid_views_list = project_points(rig, flat_points)
        total = None
        count = np.zeros(flat_points.shape[0])
        for camera, fmap, uv, valid in zip(rig.cameras, level_maps, uv_views, valid_views_list):
            uv_feat = camera.to_feature_coords(uv, fmap.shape[1:])
            samples = bilinear_sample(fmap, uv_feat).reshape(n_q, heads, points, channels)
            values = _value_heads(weights, samples, heads) * valid.reshape(n_q, heads, points, 1)
            total = values if total is None else total + values
            count += valid
        valid_views[level_index] = count.reshape(n_q, heads, points)
        per_level.append(total / np.maximum(count, 1.0).reshape(n_q, heads, points, 1))

    gathered = stack(per_level, axis=2)
    pooled = (gathered * attention.reshape(n_q, heads, n_levels, points, 1)).sum(axis=(2, 3))
    output = weights.output_proj(pooled.reshape(n_q, heads * head_dim))
    if not return_details:
        return output
    return AttentionDetails(output, attention.data, sample_points.data, valid_views)


def pca_cross_frame(queries: QuerySet, features_now: FeatureInput, features_past: Optional[FeatureInput],
                    rig_now: CameraRig, rig_past: Optional[CameraRig], pose_now: EgoPose,
                    pose_past: Optional[EgoPose], weights: PcaWeights, ego_align: bool = True,
                    return_details: bool = False):
    """
    Cross-frame projective attention: ``½ (PCA(q, c_t, F_t) + PCA(q, c_{t-1}, F_{t-1}))``.

    ``c_{t-1}`` is the current center aligned to the past ego frame (or the
    unaligned center when ``ego_align`` is off). Both passes share weights.
    Without a past frame or pose, or when no sampling point lands in any past
    view, this falls back to single-frame attention and the details report
    ``used_past=False``.
    """
    current = pca_forward(queries, features_now, rig_now, weights, return_details=True)
    if features_past is None or pose_past is None:
        logger.debug("no past frame available; cross-frame attention falls back to single frame")
        return current if return_details else current.output

    past_centers = queries.centers
    if ego_align:
        past_centers = align_center_to_past(queries.centers, pose_now, pose_past)
    past = pca_forward(queries, features_past, rig_past or rig_now, weights, centers=past_centers,
                       return_details=True)
    if not past.valid_views.any():
        logger.debug("no sampling point projects into the past frame; using the current frame only")
        return current if return_details else current.output
    output = (current.output + past.output) * 0.5
    if not return_details:
        return output
    return AttentionDetails(output, current.attention, current.sample_points, current.valid_views, used_past=True)


class Sca2dWeights(Module):
    """Learnable parts of the 2-D-offset spatial cross-attention baseline.

    Offsets are predicted in feature-map pixels around each view's projected
    reference center.
    """

    def __init__(self, channels: int, heads: int, points: int, rng: Optional[np.random.Generator] = None):
        if heads < 1 or channels % heads != 0:
            raise ShapeError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.points = points
        self.levels = 1
        self.channels = channels
        self.value_proj = LinearMap(channels, channels, rng)
        self.output_proj = LinearMap(channels, channels, rng)
        self.offset_head = LinearMap(channels, heads * points * 2, init="zeros")
        self.attn_head = LinearMap(channels, heads * points, rng)


def sca2d_forward(queries: QuerySet, features: Sequence[Tensor], rig: CameraRig, weights: Sca2dWeights,
                  centers: Optional[np.ndarray] = None, return_details: bool = False):
    """
    Spatial cross-attention with per-image-plane offsets.

    Only views in which the reference center itself projects validly are
    sampled; a view that misses the center contributes nothing, whatever its
    features hold.
    """
    maps = _as_levels(features, 1, rig.n_views)[0]
    n_q, channels, heads, points = queries.n_queries, weights.channels, weights.heads, weights.points
    head_dim = channels // heads
    centers = queries.centers if centers is None else np.asarray(centers, dtype=np.float64)

    q = queries.features + queries.pos_enc
    offsets = weights.offset_head(q).reshape(n_q, heads, points, 2)
    attention = softmax(weights.attn_head(q).reshape(n_q, heads, points), axis=-1)
    uv_centers, valid_centers = project_points(rig, Tensor(centers))

    total = None
    count = np.zeros(n_q)
    for camera, fmap, uv, valid in zip(rig.cameras, maps, uv_centers, valid_centers):
        if not valid.any():
            continue
        anchor = camera.to_feature_coords(uv.data, fmap.shape[1:])
        locations = offsets + anchor.reshape(n_q, 1, 1, 2)
        samples = bilinear_sample(fmap, locations.reshape(-1, 2)).reshape(n_q, heads, points, channels)
        values = _value_heads(weights, samples, heads) * valid.reshape(n_q, 1, 1, 1)
        total = values if total is None else total + values
        count += valid

    if total is None:
        pooled = Tensor(np.zeros((n_q, channels)))
    else:
        gathered = total / np.maximum(count, 1.0).reshape(n_q, 1, 1, 1)
        pooled = (gathered * attention.reshape(n_q, heads, points, 1)).sum(axis=2).reshape(n_q, heads * head_dim)
    output = weights.output_proj(pooled)
    if not return_details:
        return output
    return AttentionDetails(output, attention.data.reshape(n_q, heads, 1, points), np.asarray(centers),
                            count.reshape(1, n_q, 1, 1).astype(np.int64))


class MhaWeights(Module):
    """Query/key/value/output projections of multi-head attention."""

    def __init__(self, channels: int, heads: int, rng: Optional[np.random.Generator] = None):
        if heads < 1 or channels % heads != 0:
            raise ShapeError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.q_proj = LinearMap(channels, channels, rng)
        self.k_proj = LinearMap(channels, channels, rng)
        self.v_proj = LinearMap(channels, channels, rng)
        self.out_proj = LinearMap(channels, channels, rng)


def mha(query: Tensor, key: Tensor, value: Tensor, weights: MhaWeights) -> Tensor:
    """
    Scaled dot-product multi-head attention.

    Args:
        query: ``[N_q, C]``
        key: ``[N_k, C]``
        value: ``[N_k, C]``
        weights: Projections; ``weights.heads`` must divide ``C``

    Returns:
        ``[N_q, C]``

    Raises:
        ShapeError: On any dimension mismatch
    """
    n_q, channels = query.shape
    if key.ndim != 2 or key.shape[1] != channels or value.shape != key.shape:
        raise ShapeError(f"mha shapes disagree: query {query.shape}, key {key.shape}, value {value.shape}")
    if channels != weights.q_proj.in_features:
        raise ShapeError(f"mha weights expect {weights.q_proj.in_features} channels, got {channels}")
    n_k = key.shape[0]
    heads = weights.heads
    head_dim = channels // heads

    q = weights.q_proj(query).reshape(n_q, heads, head_dim).transpose(1, 0, 2)
    k = weights.k_proj(key).reshape(n_k, heads, head_dim).transpose(1, 0, 2)
    v = weights.v_proj(value).reshape(n_k, heads, head_dim).transpose(1, 0, 2)
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(head_dim))
    attended = softmax(scores, axis=-1) @ v
    return weights.out_proj(attended.transpose(1, 0, 2).reshape(n_q, channels))


def rectify_past_queries(past: QuerySet, pose_now: EgoPose, pose_past: EgoPose, pos_encoder: PositionEncoder,
                         ego_align: bool = True) -> QuerySet:
    """Move past query centers into the current ego frame and re-encode their positions."""
    centers = past.centers
    if ego_align:
        centers = align_center_to_now(past.centers, pose_now, pose_past)
    return QuerySet(past.features, centers, pos_encoder(centers), past.padded)


def temporal_self_attention(queries_now: QuerySet, queries_past: Optional[QuerySet], pose_now: EgoPose,
                            pose_past: Optional[EgoPose], weights: MhaWeights, pos_encoder: PositionEncoder,
                            ego_align: bool = True) -> Tensor:
    """
    ``MHA(Q_t, [Q_t, Q_{t-1}])`` with ego-motion-rectified past positions.

    Queries and keys carry their positional encodings; values are the bare
    query features. With no past queries this is plain self-attention.
    """
    query = queries_now.features + queries_now.pos_enc
    if queries_past is None or queries_past.n_queries == 0 or pose_past is None:
        return mha(query, query, queries_now.features, weights)
    past = rectify_past_queries(queries_past, pose_now, pose_past, pos_encoder, ego_align)
    key = concat([query, past.features + past.pos_enc], axis=0)
    value = concat([queries_now.features, past.features], axis=0)
    return mha(query, key, value, weights)
