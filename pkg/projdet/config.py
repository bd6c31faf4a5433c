"""
Configuration: nested dataclasses, JSON files, dotted overrides and presets.

Example:
    >>> config = load_config(preset_name="desk", overrides=["model.layers=3", "temporal.enabled=on"])
    >>> config.model.layers
    3
"""

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

from .bev_init import BevGridSpec
from .detector import DecoderConfig
from .exceptions import ConfigError
from .geometry import CameraRig, default_rig
from .synth import SceneSpec
from .temporal import TemporalConfig

logger = logging.getLogger(__name__)

ModelConfig = DecoderConfig

FINGERPRINT_SECTIONS = ("model", "grid", "rig")


@dataclass
class GridConfig:
    """Perception range (m) and grid shape ``(X, Y, Z)`` in cells."""

    x_range: Tuple[float, float] = (-12.8, 12.8)
    y_range: Tuple[float, float] = (-12.8, 12.8)
    z_range: Tuple[float, float] = (-1.0, 3.0)
    shape: Tuple[int, int, int] = (16, 16, 4)

    def to_spec(self) -> BevGridSpec:
        x, y, z = self.shape
        return BevGridSpec(self.x_range, self.y_range, self.z_range, (z, y, x))


@dataclass
class RigConfig:
    n_cameras: int = 4
    image_size: Tuple[int, int] = (64, 64)
    feature_size: Tuple[int, int] = (32, 32)
    hfov_deg: float = 100.0
    height: float = 1.5
    feature_channels: int = 32

    def build(self) -> CameraRig:
        return default_rig(self.n_cameras, tuple(self.image_size), self.hfov_deg, self.height)


@dataclass
class TrainConfig:
    """
    Optimization settings.

    ``lr`` is the rate of a ``reference_channels``-wide model at
    ``reference_batch``. The effective rate scales linearly with ``batch_size``
    and with the square root of the model width below the reference width.
    """

    steps: int = 2000
    batch_size: int = 1
    lr: float = 2e-4
    reference_batch: int = 1
    reference_channels: int = 256
    weight_decay: float = 1e-4
    grad_clip: float = 10.0
    log_every: int = 50
    checkpoint_every: int = 500
    n_scenes: int = 8

    def effective_lr(self, channels: Optional[int] = None) -> float:
        """Learning rate for a model ``channels`` wide; the reference width when omitted."""
        rate = self.lr * self.batch_size / max(self.reference_batch, 1)
        if channels is not None and channels < self.reference_channels:
            rate *= math.sqrt(channels / self.reference_channels)
        return rate


@dataclass
class SceneConfig:
    n_objects: int = 4
    object_speed: Tuple[float, float] = (0.0, 2.0)
    ego_speed: float = 0.0
    ego_yaw_rate: float = 0.05
    duration: float = 4.0
    frame_period: float = 0.5
    min_distance: float = 3.0

    def to_spec(self, seed: int) -> SceneSpec:
        return SceneSpec(self.n_objects, tuple(self.object_speed), self.ego_speed, self.ego_yaw_rate,
                         self.duration, self.frame_period, self.min_distance, seed)


@dataclass
class EvalConfig:
    thresholds: Tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    n_scenes: int = 4
    seed_offset: int = 1000
    score_floor: float = 0.0
    class_aware: bool = True


@dataclass
class Config:
    preset: str = "desk"
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    model: DecoderConfig = field(default_factory=DecoderConfig)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Config":
        """
        Build a config from nested dictionaries; missing keys keep defaults.

        Raises:
            ConfigError: On unknown sections or keys
        """
        return _from_dict(cls, data, "")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def fingerprint(self) -> str:
        """SHA-256 of the sections that decide parameter shapes and meaning: ``model``, ``grid`` and ``rig``."""
        data = self.to_dict()
        sections = {key: data[key] for key in FINGERPRINT_SECTIONS}
        canonical = json.dumps(sections, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Sequence[str]) -> "Config":
        config = Config.from_dict(self.to_dict())
        for item in overrides:
            apply_override(config, item)
        return config


def _coerce(value: Any, current: Any, key: str) -> Any:
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("on", "true", "yes", "1"):
            return True
        if isinstance(value, str) and value.lower() in ("off", "false", "no", "0"):
            return False
        raise ConfigError(f"'{key}' expects on/off, got {value!r}")
    try:
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            if isinstance(value, str):
                value = json.loads(value)
            items = list(value)
            if current and len(items) != len(current) and not isinstance(current[0], float):
                raise ValueError(value)
            kind = type(current[0]) if current else float
            return tuple(kind(v) for v in items)
        if isinstance(current, str):
            return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"cannot use {value!r} for '{key}': {str(e)}")
    return value


def _from_dict(cls, data: Dict[str, Any], prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{prefix.rstrip('.') or 'root'}' must be an object")
    instance = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    values = {}
    for name, value in data.items():
        current = getattr(instance, name)
        if dataclasses.is_dataclass(current):
            values[name] = _from_dict(type(current), value, f"{prefix}{name}.")
        else:
            values[name] = _coerce(value, current, prefix + name)
    try:
        return dataclasses.replace(instance, **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config section '{prefix.rstrip('.')}': {str(e)}")


def apply_override(config: Config, item: str) -> Config:
    """
    Apply one ``section.key=value`` override in place.

    Raises:
        ConfigError: If the item is malformed or names an unknown key
    """
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    path, raw = item.split("=", 1)
    parts = path.strip().split(".")
    target = config
    for part in parts[:-1]:
        if not hasattr(target, part) or not dataclasses.is_dataclass(getattr(target, part)):
            raise ConfigError(f"unknown config section '{path}'")
        target = getattr(target, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(target) or leaf not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key '{path}'")
    current = getattr(target, leaf)
    if dataclasses.is_dataclass(current):
        raise ConfigError(f"'{path}' is a section, not a value")
    value: Any = raw.strip()
    if not isinstance(current, (str, bool, tuple)):
        try:
            value = json.loads(value)
        except ValueError:
            pass
    setattr(target, leaf, _coerce(value, current, path))
    if dataclasses.is_dataclass(target) and hasattr(target, "__post_init__"):
        try:
            target.__post_init__()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value for '{path}': {str(e)}")
    return config


def desk_preset() -> Config:
    return Config()


def paper_scale_preset() -> Config:
    """Full-size setting: 900 queries, 8 heads and points, a (144, 144, 8) grid over +-51.2 m."""
    return Config(
        preset="paper-scale",
        grid=GridConfig((-51.2, 51.2), (-51.2, 51.2), (-5.0, 3.0), (144, 144, 8)),
        rig=RigConfig(n_cameras=6, image_size=(1600, 900), feature_size=(58, 100), hfov_deg=70.0,
                      height=1.5, feature_channels=256),
        model=DecoderConfig(layers=6, channels=256, heads=8, points=8, n_query=900, ffn=512,
                            heatmap_hidden=64, use_encoder=False),
        temporal=TemporalConfig(enabled=True),
        train=TrainConfig(steps=24 * 3500, batch_size=8, lr=2e-4, reference_batch=8, weight_decay=0.01,
                          grad_clip=35.0),
        scene=SceneConfig(n_objects=30, object_speed=(0.0, 10.0), ego_speed=5.0, duration=20.0),
    )


PRESETS: Dict[str, Callable[[], Config]] = {
    "desk": desk_preset,
    "paper-scale": paper_scale_preset,
}


def preset(name: str) -> Config:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; choose from {', '.join(PRESETS)}")
    return PRESETS[name]()


def load_config(path: Optional[str] = None, preset_name: Optional[str] = None,
                overrides: Sequence[str] = ()) -> Config:
    """
    Resolve a config: preset defaults, then the JSON file, then overrides.

    Raises:
        ConfigError: On unreadable files, unknown keys or bad overrides
    """
    base = preset(preset_name or "desk")
    if path:
        try:
            with open(path) as f:
                data = json.load(f)
        except (IOError, ValueError) as e:
            raise ConfigError(f"Failed to read config {path}: {str(e)}")
        merged = _merge(base.to_dict(), data)
        base = Config.from_dict(merged)
    return base.with_overrides(overrides) if overrides else base


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def save_config(path: str, config: Config) -> str:
    try:
        with open(path, "w") as f:
            f.write(config.to_json())
    except IOError as e:
        raise ConfigError(f"Failed to write config {path}: {str(e)}")
    return path
