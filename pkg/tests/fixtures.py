"""Small configurations and frames shared by the model-level tests."""

from projdet.config import Config
from projdet.synth import generate_scene, make_frame

TINY_OVERRIDES = [
    "grid.shape=[8, 8, 2]",
    "rig.feature_size=[8, 8]",
    "rig.feature_channels=8",
    "model.channels=8",
    "model.heads=2",
    "model.points=2",
    "model.n_query=6",
    "model.ffn=16",
    "model.heatmap_hidden=8",
    "train.n_scenes=2",
    "train.log_every=0",
    "train.checkpoint_every=0",
    "scene.n_objects=2",
    "scene.duration=1.5",
    "eval.n_scenes=1",
]


def tiny_config(*extra):
    """A model small enough to train for a few steps inside a unit test."""
    return Config().with_overrides(TINY_OVERRIDES + list(extra))


def tiny_frames(config, seed=0):
    spec = config.grid.to_spec()
    scene = generate_scene(config.scene.to_spec(seed), spec, config.rig.build())
    rig = config.rig
    return [make_frame(scene, t, spec, tuple(rig.feature_size), rig.feature_channels, config.model.n_classes)
            for t in scene.times()]
