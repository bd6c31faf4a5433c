"""Ablation studies: train each variant with identical seeds and evaluate it."""

import logging
import os
from typing import Callable, Dict, List, Optional, Tuple

from .config import Config
from .exceptions import ConfigError
from .training import SceneDataset, Trainer, evaluate_model

logger = logging.getLogger(__name__)

Variant = Tuple[str, List[str]]

INTERVALS = (0.5, 1.0, 1.5, 2.0)
MIN_OBJECT_SPEED = (1.0, 4.0)
MIN_EGO_SPEED = 3.0


def _moving_objects(config: Config) -> List[str]:
    low, high = config.scene.object_speed
    if high >= MIN_OBJECT_SPEED[0]:
        return []
    return [f"scene.object_speed=[{MIN_OBJECT_SPEED[0]}, {MIN_OBJECT_SPEED[1]}]"]


def _moving_ego(config: Config) -> List[str]:
    if config.scene.ego_speed >= MIN_EGO_SPEED:
        return []
    return [f"scene.ego_speed={MIN_EGO_SPEED}"]


def query_init_variants(config: Config) -> List[Variant]:
    return [
        ("random", ["model.position_init=off", "model.feature_init=off"]),
        ("position", ["model.position_init=on", "model.feature_init=off"]),
        ("position+feature", ["model.position_init=on", "model.feature_init=on"]),
    ]


def attention_variants(config: Config) -> List[Variant]:
    return [("sca2d", ["model.attn=sca2d"]), ("pca", ["model.attn=pca"])]


def temporal_variants(config: Config) -> List[Variant]:
    moving = _moving_objects(config)
    return [
        ("none", moving + ["temporal.enabled=off"]),
        ("query", moving + ["temporal.enabled=on", "temporal.query_aggregation=on",
                            "temporal.feature_aggregation=off"]),
        ("feature", moving + ["temporal.enabled=on", "temporal.query_aggregation=off",
                              "temporal.feature_aggregation=on"]),
        ("query+feature", moving + ["temporal.enabled=on", "temporal.query_aggregation=on",
                                    "temporal.feature_aggregation=on"]),
    ]


def ego_align_variants(config: Config) -> List[Variant]:
    moving = _moving_ego(config) + ["temporal.enabled=on"]
    return [("without", moving + ["temporal.ego_align=off"]), ("with", moving + ["temporal.ego_align=on"])]


STUDIES: Dict[str, Callable[[Config], List[Variant]]] = {
    "query-init": query_init_variants,
    "attention": attention_variants,
    "temporal": temporal_variants,
    "ego-align": ego_align_variants,
}


def _run_variant(study: str, name: str, config: Config, steps: Optional[int],
                 out_dir: Optional[str]) -> Dict[str, object]:
    variant_dir = os.path.join(out_dir, study, name.replace("+", "_")) if out_dir else None
    trainer = Trainer(config, variant_dir)
    trainer.run(steps)
    report = evaluate_model(trainer.detector, config)
    return {"study": study, "variant": name, **report.to_row()}


def run_interval_study(config: Config, steps: Optional[int] = None,
                       out_dir: Optional[str] = None) -> List[Dict[str, object]]:
    """Train one temporal model and evaluate it at each inference interval."""
    config = config.with_overrides(_moving_objects(config) + ["temporal.enabled=on"])
    trainer = Trainer(config, os.path.join(out_dir, "interval") if out_dir else None)
    trainer.run(steps)
    dataset = SceneDataset(config, config.eval.n_scenes, config.seed + config.eval.seed_offset)
    rows = []
    for interval in INTERVALS:
        report = evaluate_model(trainer.detector, config, dataset, interval)
        rows.append({"study": "interval", "variant": f"{interval:g}s", **report.to_row()})
    return rows


def run_study(name: str, config: Config, steps: Optional[int] = None,
              out_dir: Optional[str] = None) -> List[Dict[str, object]]:
    """
    Run one named study.

    Every variant starts from the same seed, so they differ only in the
    switches the study flips.

    Args:
        name: ``query-init``, ``attention``, ``temporal``, ``ego-align`` or ``interval``
        config: Base configuration
        steps: Training steps per variant (default ``train.steps``)
        out_dir: Optional directory for per-variant loss traces and checkpoints

    Returns:
        One row per variant with AP per threshold, ATE, AVE and recall

    Raises:
        ConfigError: For an unknown study name
    """
    if name == "interval":
        return run_interval_study(config, steps, out_dir)
    if name not in STUDIES:
        raise ConfigError(f"unknown study '{name}'; choose from {', '.join(list(STUDIES) + ['interval'])}")
    rows = []
    for variant, overrides in STUDIES[name](config):
        logger.info("study %s: training variant %s", name, variant)
        rows.append(_run_variant(name, variant, config.with_overrides(overrides), steps, out_dir))
    return rows


STUDY_NAMES = tuple(STUDIES) + ("interval",)
