"""Camera rig model, the 3D-to-2D projection operator and SE(3) ego motion.

Frames: the ego frame is x forward, y left, z up (meters). Camera frames are
x right, y down, z along the optical axis. Pixel coordinates put texel centers
at integers, ``u`` along the image width and ``v`` along its height.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import GeometryError
from .tensor import ArrayLike, Tensor, as_tensor, stack, where

DEPTH_EPSILON = 1e-3
ORTHONORMAL_TOLERANCE = 1e-9

# camera axes expressed in the ego frame for a camera looking along +x
_CAMERA_BASE = np.array([[0.0, 0.0, 1.0],
                         [-1.0, 0.0, 0.0],
                         [0.0, -1.0, 0.0]])


def rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``p -> R p + t``.

    Raises:
        GeometryError: If ``rotation`` is not orthonormal with determinant +1
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise GeometryError(f"pose needs a 3x3 rotation and a 3-vector, got {rotation.shape}, {translation.shape}")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise GeometryError("pose has non-finite entries")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise GeometryError("rotation is not orthonormal")
        if np.linalg.det(rotation) <= 0.0:
            raise GeometryError("rotation has negative determinant")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        return cls(rotation_z(yaw), np.asarray(translation, dtype=np.float64))

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: ArrayLike) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def to_dict(self) -> Dict[str, Any]:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Pose":
        return cls(np.asarray(data["rotation"]), np.asarray(data["translation"]))


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def invert(pose: Pose) -> Pose:
    return pose.inverse()


def apply(pose: Pose, points: ArrayLike) -> np.ndarray:
    return pose.apply(points)


@dataclass(frozen=True)
class EgoPose:
    world_from_ego: Pose
    timestamp: float

    def to_dict(self) -> Dict[str, Any]:
        return {"world_from_ego": self.world_from_ego.to_dict(), "timestamp": self.timestamp}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EgoPose":
        return cls(Pose.from_dict(data["world_from_ego"]), float(data["timestamp"]))


def past_from_now(pose_now: EgoPose, pose_past: EgoPose) -> Pose:
    return pose_past.world_from_ego.inverse().compose(pose_now.world_from_ego)


def align_center_to_past(center_now: ArrayLike, pose_now: EgoPose, pose_past: EgoPose) -> np.ndarray:
    """
    Express ego(t) coordinates in the ego frame of an earlier timestamp.

    Args:
        center_now: Point(s) of shape ``[..., 3]`` in the current ego frame
        pose_now: Ego pose at the current timestamp
        pose_past: Ego pose at the earlier timestamp

    Returns:
        The same world point(s) in the past ego frame
    """
    return past_from_now(pose_now, pose_past).apply(center_now)


def align_center_to_now(center_past: ArrayLike, pose_now: EgoPose, pose_past: EgoPose) -> np.ndarray:
    """Inverse of :func:`align_center_to_past`."""
    return past_from_now(pose_now, pose_past).inverse().apply(center_past)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera.

    Attributes:
        intrinsics: 3x3 matrix with focal lengths and principal point in pixels
        ego_from_cam: Camera pose in the ego frame
        image_size: ``(width, height)`` in pixels
    """

    intrinsics: np.ndarray
    ego_from_cam: Pose
    image_size: Tuple[int, int]

    def __post_init__(self):
        k = np.array(self.intrinsics, dtype=np.float64)
        if k.shape != (3, 3):
            raise GeometryError(f"intrinsics must be 3x3, got {k.shape}")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0:
            raise GeometryError("focal lengths must be positive")
        if k[0, 1] != 0.0:
            raise GeometryError("intrinsics must have zero skew")
        width, height = (int(n) for n in self.image_size)
        if width < 1 or height < 1:
            raise GeometryError(f"image size must be positive, got {self.image_size}")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "image_size", (width, height))

    @property
    def fx(self) -> float:
        return self.intrinsics[0, 0]

    @property
    def fy(self) -> float:
        return self.intrinsics[1, 1]

    @property
    def cx(self) -> float:
        return self.intrinsics[0, 2]

    @property
    def cy(self) -> float:
        return self.intrinsics[1, 2]

    def to_camera(self, points_ego: ArrayLike) -> np.ndarray:
        return self.ego_from_cam.inverse().apply(points_ego)

    def project_array(self, points_ego: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Project ego-frame points.

        Returns:
            ``(uv, depth, valid)`` with shapes ``[..., 2]``, ``[...]``, ``[...]``;
            ``uv`` stays finite for points behind the camera
        """
        cam = self.to_camera(points_ego)
        depth = cam[..., 2]
        safe = np.where(depth > DEPTH_EPSILON, depth, 1.0)
        uv = np.stack([self.fx * cam[..., 0] / safe + self.cx, self.fy * cam[..., 1] / safe + self.cy], axis=-1)
        return uv, depth, self.valid_mask(uv, depth)

    def valid_mask(self, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
        width, height = self.image_size
        return ((depth > DEPTH_EPSILON)
                & (uv[..., 0] >= 0.0) & (uv[..., 0] <= width - 1)
                & (uv[..., 1] >= 0.0) & (uv[..., 1] <= height - 1))

    def to_feature_coords(self, uv, feature_size: Tuple[int, int]):
        """
        Map image pixel coordinates onto a ``(height, width)`` feature map.

        Corners are aligned: image texel 0 maps to feature texel 0 and the last
        image texel to the last feature texel. Works on arrays and tensors.
        """
        width, height = self.image_size
        feat_h, feat_w = feature_size
        scale = np.array([(feat_w - 1) / max(width - 1, 1), (feat_h - 1) / max(height - 1, 1)])
        return uv * scale

    def to_dict(self) -> Dict[str, Any]:
        return {"intrinsics": self.intrinsics.tolist(), "ego_from_cam": self.ego_from_cam.to_dict(),
                "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CameraModel":
        return cls(np.asarray(data["intrinsics"]), Pose.from_dict(data["ego_from_cam"]), tuple(data["image_size"]))


@dataclass(frozen=True)
class CameraRig:
    cameras: List[CameraModel] = field(default_factory=list)

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise GeometryError("a camera rig needs at least one camera")
        object.__setattr__(self, "cameras", list(self.cameras))

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    def to_dict(self) -> Dict[str, Any]:
        return {"cameras": [camera.to_dict() for camera in self.cameras]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CameraRig":
        return cls([CameraModel.from_dict(c) for c in data["cameras"]])


@dataclass(frozen=True)
class Projection:
    view: int
    uv: np.ndarray
    valid: bool


def project(rig: CameraRig, point_ego: ArrayLike) -> List[Projection]:
    """
    Project one ego-frame point into every view of the rig.

    Args:
        rig: Camera rig
        point_ego: 3-vector in meters

    Returns:
        One :class:`Projection` per view; the valid ones form V_valid
    """
    point = np.asarray(point_ego, dtype=np.float64).reshape(3)
    results = []
    for index, camera in enumerate(rig.cameras):
        uv, _, valid = camera.project_array(point)
        results.append(Projection(index, uv, bool(valid)))
    return results


def project_points(rig: CameraRig, points: ArrayLike) -> Tuple[List[Tensor], List[np.ndarray]]:
    """
    Differentiable projection of ``[N, 3]`` ego-frame points into every view.

    Returns:
        ``(uv, valid)``: per view, a ``[N, 2]`` pixel tensor and a ``[N]`` mask.
        Points behind a camera get finite placeholder coordinates and an
        invalid flag.
    """
    points = as_tensor(points)
    uv_per_view, valid_per_view = [], []
    for camera in rig.cameras:
        pose = camera.ego_from_cam
        cam = (points - pose.translation) @ pose.rotation
        depth = cam[:, 2]
        safe = where(depth.data > DEPTH_EPSILON, depth, 1.0)
        u = cam[:, 0] / safe * camera.fx + camera.cx
        v = cam[:, 1] / safe * camera.fy + camera.cy
        uv = stack([u, v], axis=-1)
        uv_per_view.append(uv)
        valid_per_view.append(camera.valid_mask(uv.data, depth.data))
    return uv_per_view, valid_per_view


def default_rig(n_cameras: int = 4, image_size: Tuple[int, int] = (64, 64), hfov_deg: float = 100.0,
                height: float = 1.5) -> CameraRig:
    """
    Build a ring of identical cameras at equal headings around the ego origin.

    Camera 0 looks along +x; camera k looks along ``k * 360 / n_cameras`` degrees.
    """
    width, image_height = image_size
    focal = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    intrinsics = np.array([[focal, 0.0, (width - 1) / 2.0],
                           [0.0, focal, (image_height - 1) / 2.0],
                           [0.0, 0.0, 1.0]])
    cameras = []
    for k in range(n_cameras):
        heading = 2.0 * math.pi * k / n_cameras
        pose = Pose(rotation_z(heading) @ _CAMERA_BASE, np.array([0.0, 0.0, height]))
        cameras.append(CameraModel(intrinsics, pose, (width, image_height)))
    return CameraRig(cameras)
