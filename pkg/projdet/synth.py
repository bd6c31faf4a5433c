"""Synthetic multi-camera scenes: moving boxes, an ego trajectory and rendered feature maps.

Rendered maps stand in for backbone features. Every object splats a Gaussian
blob at its projected center in each view where it has positive depth; the
blob carries a class color in the first ``C - 2`` channels, the object's depth
in the next one and plain occupancy in the last.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bev_init import BevGridSpec
from .detector import Box3D
from .exceptions import ConfigError
from .geometry import DEPTH_EPSILON, CameraRig, EgoPose, Pose, default_rig
from .layers import TinyEncoder
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

SCENE_FORMAT = "projdet-scene"
SCENE_VERSION = 1
FRAME_PERIOD = 0.5
BACKGROUND = 0.05
PALETTE_SEED = 1234
DEPTH_SCALE = 20.0
MIN_SIGMA, MAX_SIGMA = 0.5, 8.0

# (w, l, h) meters
CLASS_SIZES = {
    0: (1.9, 4.5, 1.6),
    1: (0.7, 0.7, 1.75),
    2: (2.5, 7.0, 3.0),
}
CLASS_NAMES = {0: "car", 1: "pedestrian", 2: "truck"}


@dataclass
class ObjectTrack:
    """Constant-velocity object in world coordinates."""

    class_id: int
    center: np.ndarray
    velocity: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(2)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)

    def center_at(self, t: float) -> np.ndarray:
        return self.center + np.array([self.velocity[0], self.velocity[1], 0.0]) * t

    def to_dict(self) -> Dict[str, Any]:
        return {"class_id": int(self.class_id), "center": self.center.tolist(), "velocity": self.velocity.tolist(),
                "size": self.size.tolist(), "yaw": float(self.yaw)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ObjectTrack":
        return cls(data["class_id"], data["center"], data["velocity"], data["size"], data.get("yaw", 0.0))


@dataclass
class EgoTrajectory:
    """Ego motion at constant speed and yaw rate (an arc, or a line when the rate is zero)."""

    speed: float = 0.0
    yaw_rate: float = 0.0
    start: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def state_at(self, t: float) -> Tuple[float, float, float]:
        x0, y0, yaw0 = self.start
        yaw = yaw0 + self.yaw_rate * t
        if abs(self.yaw_rate) < 1e-9:
            return x0 + self.speed * t * math.cos(yaw0), y0 + self.speed * t * math.sin(yaw0), yaw
        radius = self.speed / self.yaw_rate
        return (x0 + radius * (math.sin(yaw) - math.sin(yaw0)),
                y0 - radius * (math.cos(yaw) - math.cos(yaw0)), yaw)

    def pose_at(self, t: float) -> EgoPose:
        x, y, yaw = self.state_at(t)
        return EgoPose(Pose.from_yaw(yaw, (x, y, 0.0)), float(t))

    def to_dict(self) -> Dict[str, Any]:
        return {"speed": self.speed, "yaw_rate": self.yaw_rate, "start": list(self.start)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EgoTrajectory":
        return cls(float(data["speed"]), float(data["yaw_rate"]), tuple(data["start"]))


@dataclass
class Scene:
    objects: List[ObjectTrack]
    ego: EgoTrajectory
    rig: CameraRig
    duration: float = 4.0
    frame_period: float = FRAME_PERIOD
    seed: int = 0

    def __post_init__(self):
        if self.frame_period <= 0.0:
            raise ConfigError(f"frame period must be positive, got {self.frame_period}")

    def times(self) -> np.ndarray:
        count = int(math.floor(self.duration / self.frame_period + 1e-9)) + 1
        return np.arange(count) * self.frame_period

    def to_dict(self) -> Dict[str, Any]:
        return {"format": SCENE_FORMAT, "version": SCENE_VERSION, "seed": self.seed, "duration": self.duration,
                "frame_period": self.frame_period, "rig": self.rig.to_dict(), "ego": self.ego.to_dict(),
                "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scene":
        if data.get("format") != SCENE_FORMAT:
            raise ConfigError("not a projdet scene file")
        return cls([ObjectTrack.from_dict(o) for o in data["objects"]], EgoTrajectory.from_dict(data["ego"]),
                   CameraRig.from_dict(data["rig"]), float(data["duration"]), float(data["frame_period"]),
                   int(data.get("seed", 0)))


@dataclass
class SceneSpec:
    """Parameters of a randomly generated scene.

    Attributes:
        n_objects: Number of objects
        object_speed: Range of object speeds (m/s)
        ego_speed: Ego speed (m/s)
        ego_yaw_rate: Ego yaw rate (rad/s)
        duration: Scene length (s)
        frame_period: Time between frames (s)
        min_distance: Smallest distance of an object from the ego at mid-scene (m)
        seed: Generator seed
    """

    n_objects: int = 4
    object_speed: Tuple[float, float] = (0.0, 2.0)
    ego_speed: float = 0.0
    ego_yaw_rate: float = 0.05
    duration: float = 4.0
    frame_period: float = FRAME_PERIOD
    min_distance: float = 3.0
    seed: int = 0


@dataclass
class Frame:
    """One rendered time step: model input plus ego-frame ground truth."""

    timestamp: float
    feature_maps: List[np.ndarray]
    rig: CameraRig
    ego_pose: EgoPose
    boxes: List[Box3D] = field(default_factory=list)


def _ego_frame(pose: EgoPose, points: np.ndarray) -> np.ndarray:
    return pose.world_from_ego.inverse().apply(points)


def generate_scene(spec: SceneSpec, grid: BevGridSpec, rig: Optional[CameraRig] = None) -> Scene:
    """
    Random scene, deterministic under ``spec.seed``.

    Objects are placed in the perception range around the ego pose at
    mid-scene and move at constant velocity; positions that leave twice the
    perception range during the scene are redrawn. An object with no valid
    position after 100 draws is left out and a warning is logged.
    """
    if spec.n_objects < 0:
        raise ConfigError("n_objects must be non-negative")
    rng = np.random.default_rng(spec.seed)
    rig = rig or default_rig()
    ego = EgoTrajectory(spec.ego_speed, spec.ego_yaw_rate, (0.0, 0.0, 0.0))
    scene = Scene([], ego, rig, spec.duration, spec.frame_period, spec.seed)
    times = scene.times()
    mid_pose = ego.pose_at(times[len(times) // 2])
    lower, upper = grid.lower[:2] + 1.0, grid.upper[:2] - 1.0
    half = 0.5 * (grid.upper[:2] - grid.lower[:2])
    center_xy = 0.5 * (grid.upper[:2] + grid.lower[:2])

    for _ in range(spec.n_objects):
        class_id = int(rng.integers(len(CLASS_SIZES)))
        size = np.array(CLASS_SIZES[class_id])
        track = None
        for _attempt in range(100):
            xy = rng.uniform(lower, upper)
            if np.hypot(*xy) < spec.min_distance:
                continue
            speed = rng.uniform(*spec.object_speed)
            heading = rng.uniform(-math.pi, math.pi)
            start_ego = np.array([xy[0], xy[1], size[2] / 2.0])
            world_mid = mid_pose.world_from_ego.apply(start_ego)
            velocity = speed * np.array([math.cos(heading), math.sin(heading)])
            world_t0 = world_mid - np.array([velocity[0], velocity[1], 0.0]) * mid_pose.timestamp
            candidate = ObjectTrack(class_id, world_t0, velocity, size, heading)
            inside = all(np.all(np.abs(_ego_frame(ego.pose_at(t), candidate.center_at(t))[:2] - center_xy)
                                <= 2.0 * half) for t in times)
            if inside:
                track = candidate
                break
        if track is None:
            continue
        scene.objects.append(track)
    if len(scene.objects) < spec.n_objects:
        logger.warning("scene seed=%d: placed %d of %d objects; the rest found no position at least %.1f m "
                       "from the ego that stays in range", spec.seed, len(scene.objects), spec.n_objects,
                       spec.min_distance)
    logger.debug("generated scene seed=%d with %d objects", spec.seed, len(scene.objects))
    return scene


def ground_truth(scene: Scene, t: float, grid: BevGridSpec) -> List[Box3D]:
    """Boxes in the ego frame at time ``t`` whose centers lie in the perception range."""
    pose = scene.ego.pose_at(t)
    to_ego = pose.world_from_ego.inverse()
    ego_yaw = pose.world_from_ego.yaw
    boxes = []
    for track in scene.objects:
        center = to_ego.apply(track.center_at(t))
        if not grid.contains_bev(center):
            continue
        velocity = to_ego.rotation[:2, :2] @ track.velocity
        boxes.append(Box3D(center, track.size, track.yaw - ego_yaw, velocity, track.class_id))
    return boxes


def class_palette(n_classes: int, channels: int) -> np.ndarray:
    rng = np.random.default_rng(PALETTE_SEED)
    return rng.uniform(0.2, 1.0, size=(n_classes, max(channels - 2, 0)))


def render_features(scene: Scene, t: float, feature_size: Tuple[int, int] = (32, 32), channels: int = 32,
                    n_classes: int = 3, encoder: Optional[TinyEncoder] = None) -> List[np.ndarray]:
    """
    Render one ``[channels, H, W]`` map per view at time ``t``.

    Blob width in feature pixels is ``focal * radius / depth`` clipped to
    ``[0.5, 8]`` and truncated at three widths; where blobs overlap, the
    stronger one wins.
    """
    if channels < 3:
        raise ConfigError("rendering needs at least 3 channels")
    feat_h, feat_w = feature_size
    palette = class_palette(max(n_classes, len(CLASS_SIZES)), channels)
    pose = scene.ego.pose_at(t)
    to_ego = pose.world_from_ego.inverse()
    centers = [to_ego.apply(track.center_at(t)) for track in scene.objects]

    rows, cols = np.mgrid[0:feat_h, 0:feat_w]
    maps = []
    for camera in scene.rig.cameras:
        fmap = np.full((channels, feat_h, feat_w), BACKGROUND)
        strength = np.zeros((feat_h, feat_w))
        scale_u = (feat_w - 1) / max(camera.image_size[0] - 1, 1)
        for track, center in zip(scene.objects, centers):
            uv, depth, _ = camera.project_array(center)
            if depth <= DEPTH_EPSILON:
                continue
            u, v = uv[0] * scale_u, uv[1] * (feat_h - 1) / max(camera.image_size[1] - 1, 1)
            radius = 0.25 * (track.size[0] + track.size[1])
            sigma = float(np.clip(camera.fx * scale_u * radius / depth, MIN_SIGMA, MAX_SIGMA))
            dist2 = (cols - u) ** 2 + (rows - v) ** 2
            g = np.where(dist2 <= (3.0 * sigma) ** 2, np.exp(-dist2 / (2.0 * sigma * sigma)), 0.0)
            win = g > strength
            if not win.any():
                continue
            strength = np.where(win, g, strength)
            values = np.concatenate([palette[track.class_id], [depth / DEPTH_SCALE, 1.0]])
            fmap[:, win] = BACKGROUND + values[:, None] * g[win][None, :]
        maps.append(fmap)

    if encoder is not None:
        with no_grad():
            maps = [encoder(Tensor(m)).data for m in maps]
    return maps


def make_frame(scene: Scene, t: float, grid: BevGridSpec, feature_size: Tuple[int, int] = (32, 32),
               channels: int = 32, n_classes: int = 3) -> Frame:
    return Frame(float(t), render_features(scene, t, feature_size, channels, n_classes), scene.rig,
                 scene.ego.pose_at(t), ground_truth(scene, t, grid))


def scene_frames(scene: Scene, grid: BevGridSpec, feature_size: Tuple[int, int] = (32, 32),
                 channels: int = 32, n_classes: int = 3) -> List[Frame]:
    return [make_frame(scene, t, grid, feature_size, channels, n_classes) for t in scene.times()]


def training_scenes(spec: SceneSpec, grid: BevGridSpec, count: int, rig: Optional[CameraRig] = None) -> List[Scene]:
    """``count`` scenes seeded ``spec.seed, spec.seed + 1, ...``."""
    return [generate_scene(replace(spec, seed=spec.seed + i), grid, rig) for i in range(count)]


STRADDLE_BEARING = math.radians(36.0)
STRADDLE_RANGE = 6.0
STRADDLE_SIZE = (2.0, 6.0, 1.5)


def straddling_scene(rig: Optional[CameraRig] = None) -> Scene:
    """
    Static scene with one long object across the seam of views 0 and 1 of the default rig.

    The object's center projects only into view 0 while a sizable part of its
    footprint falls into view 1.
    """
    rig = rig or default_rig()
    center = np.array([STRADDLE_RANGE * math.cos(STRADDLE_BEARING), STRADDLE_RANGE * math.sin(STRADDLE_BEARING),
                       STRADDLE_SIZE[2] / 2.0])
    # long axis tangential to the bearing
    track = ObjectTrack(2, center, (0.0, 0.0), STRADDLE_SIZE, STRADDLE_BEARING + math.pi / 2.0)
    return Scene([track], EgoTrajectory(), rig, duration=0.0)


def straddle_offset_point(distance: float = 3.0) -> np.ndarray:
    """Point along the straddling object's long axis, ``distance`` meters from its center."""
    center = np.array([STRADDLE_RANGE * math.cos(STRADDLE_BEARING), STRADDLE_RANGE * math.sin(STRADDLE_BEARING),
                       STRADDLE_SIZE[2] / 2.0])
    tangent = np.array([-math.sin(STRADDLE_BEARING), math.cos(STRADDLE_BEARING), 0.0])
    return center + distance * tangent


def footprint_points(box: Box3D, samples: int = 21) -> np.ndarray:
    """Regular grid of points on the box's horizontal cross-section at center height."""
    w, l, _ = box.size
    a = np.linspace(-0.5, 0.5, samples)
    along, across = np.meshgrid(a * l, a * w, indexing="ij")
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = box.center[0] + c * along.ravel() - s * across.ravel()
    y = box.center[1] + s * along.ravel() + c * across.ravel()
    return np.stack([x, y, np.full(x.shape, box.center[2])], axis=1)


def straddle_fraction(box: Box3D, rig: CameraRig, view: int, samples: int = 21) -> float:
    """Fraction of the box footprint that projects validly into ``view``."""
    _, _, valid = rig.cameras[view].project_array(footprint_points(box, samples))
    return float(np.mean(valid))


def save_scene(path: str, scene: Scene) -> str:
    try:
        with open(path, "w") as f:
            json.dump(scene.to_dict(), f, indent=2)
    except IOError as e:
        raise ConfigError(f"Failed to write scene file {path}: {str(e)}")
    return path


def load_scene(path: str) -> Scene:
    try:
        with open(path) as f:
            data = json.load(f)
    except (IOError, ValueError) as e:
        raise ConfigError(f"Failed to read scene file {path}: {str(e)}")
    return Scene.from_dict(data)
