"""
Command-line interface.

Usage:
    projdet gradcheck [--corrupt NAME]
    projdet train [--steps N]
    projdet eval [--checkpoint DIR] [--scene FILE ...]
    projdet bench
    projdet dump-heatmap [--checkpoint DIR] [--scene FILE] [--frame N]
    projdet gen-scene [--output FILE] [--dump-features]
    projdet ablate STUDY [--steps N]

Exit codes: 0 success, 1 failed check or runtime error, 2 usage or configuration error.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

from . import __version__
from .bench import run_bench
from .bev_init import draw_gt_heatmap
from .config import PRESETS, Config, load_config, save_config
from .exceptions import ConfigError, ProjdetError
from .experiments import STUDY_NAMES, run_study
from .gradcheck import default_suite
from .metrics import evaluate, write_report_csv
from .plots import save_bev_svg, save_heatmap_svg, write_heatmap_csv
from .synth import generate_scene, load_scene, make_frame, save_scene
from .tensor_io import save_tensor
from .training import SceneDataset, Trainer, build_detector, evaluate_model, load_detector

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
PLOT_SCORE_FLOOR = 0.3


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="base configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", default="runs", help="output directory")
    common.add_argument("--temporal", type=_on_off, help="temporal fusion on|off")
    common.add_argument("--attn", choices=("pca", "sca2d"), help="decoder cross-attention")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. model.layers=3 (repeatable)")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = argparse.ArgumentParser(prog="projdet", description="Projective multi-view 3-D detection toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gradcheck", parents=[common], help="run the gradient-check suite")
    p.add_argument("--corrupt", help="scale the analytic gradient of this check (negative control)")
    p.add_argument("--only", nargs="+", help="run only these checks")
    p.add_argument("--zero-weights", action="store_true", help="run the decoder check with zero weights")

    p = commands.add_parser("train", parents=[common], help="train on generated scenes")
    p.add_argument("--steps", type=int, help="override train.steps")

    p = commands.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint directory; a freshly initialized model when omitted")
    p.add_argument("--scene", nargs="+", help="scene files; generated held-out scenes when omitted")
    p.add_argument("--oracle", action="store_true", help="score ground truth as predictions")

    p = commands.add_parser("bench", parents=[common], help="time pca_forward and volumetric_sample")
    p.add_argument("--repeats", type=int, default=5)

    p = commands.add_parser("dump-heatmap", parents=[common], help="write predicted and target heatmaps")
    p.add_argument("--checkpoint")
    p.add_argument("--scene", help="scene file; a generated scene when omitted")
    p.add_argument("--frame", type=int, default=0, help="frame index within the scene")

    p = commands.add_parser("gen-scene", parents=[common], help="write a generated scene file")
    p.add_argument("--output", help="scene file path (default OUT_DIR/scene.json)")
    p.add_argument("--dump-features", action="store_true", help="also write per-view feature tensors")

    p = commands.add_parser("ablate", parents=[common], help="run an ablation study")
    p.add_argument("study", choices=STUDY_NAMES)
    p.add_argument("--steps", type=int, help="training steps per variant")
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    """Preset, then config file, then dedicated flags, then ``--set`` overrides."""
    overrides: List[str] = []
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.temporal is not None:
        overrides.append(f"temporal.enabled={'on' if args.temporal else 'off'}")
    if args.attn is not None:
        overrides.append(f"model.attn={args.attn}")
    return load_config(args.config, args.preset, overrides + list(args.overrides))


def cmd_gradcheck(args: argparse.Namespace, config: Config) -> int:
    suite = default_suite(config.seed, zero_weights=args.zero_weights)
    if args.corrupt and args.corrupt not in suite.names:
        raise ConfigError(f"unknown check '{args.corrupt}'; choose from {', '.join(suite.names)}")
    reports = suite.run(args.only, args.corrupt)
    rows = [{"check": r.name, "max_rel_error": r.max_rel_error, "passed": r.passed} for r in reports]
    write_report_csv(os.path.join(args.out_dir, "gradcheck.csv"), rows)
    failed = [r.name for r in reports if not r.passed]
    for row in rows:
        print(f"{row['check']:<24} {row['max_rel_error']:.3e} {'ok' if row['passed'] else 'FAILED'}")
    if failed:
        logger.error("gradient check failed: %s", ", ".join(failed))
        return 1
    return 0


def cmd_train(args: argparse.Namespace, config: Config) -> int:
    save_config(os.path.join(args.out_dir, "config.json"), config)
    history = Trainer(config, args.out_dir).run(args.steps)
    if history:
        print(f"trained {len(history)} steps, final loss {history[-1].total:.4f}")
    return 0


def _dataset(config: Config, scene_files: Optional[Sequence[str]]) -> SceneDataset:
    if scene_files:
        return SceneDataset.from_scenes(config, [load_scene(path) for path in scene_files])
    return SceneDataset(config, config.eval.n_scenes, config.seed + config.eval.seed_offset)


def cmd_eval(args: argparse.Namespace, config: Config) -> int:
    dataset = _dataset(config, args.scene)
    spec = config.grid.to_spec()
    first = dataset.frame(0, 0) if len(dataset) else None
    if args.oracle:
        gts = [frame.boxes for index in range(len(dataset)) for frame in dataset.sequence(index)]
        report = evaluate(gts, gts, config.eval.thresholds, config.eval.class_aware)
        shown = first.boxes if first is not None else []
    else:
        detector = load_detector(config, args.checkpoint) if args.checkpoint else build_detector(config)
        report = evaluate_model(detector, config, dataset)
        shown = []
        if first is not None:
            output = detector.forward(first)
            shown = [box for box in output.final.boxes() if box.score >= PLOT_SCORE_FLOOR]
            save_heatmap_svg(os.path.join(args.out_dir, "heatmap.svg"), output.heatmap.numpy(), spec,
                             output.selections, first.boxes, "predicted heatmap")
    write_report_csv(os.path.join(args.out_dir, "report.csv"), [report.to_row()])
    if first is not None:
        save_bev_svg(os.path.join(args.out_dir, "bev.svg"), shown, first.boxes, spec)
    for key, value in report.to_row().items():
        print(f"{key:<14} {value:.4f}" if isinstance(value, float) else f"{key:<14} {value}")
    return 0


def cmd_bench(args: argparse.Namespace, config: Config) -> int:
    rows = run_bench(config, args.repeats)
    write_report_csv(os.path.join(args.out_dir, "bench.csv"), rows)
    for row in rows:
        print(f"{row['kernel']:<18} {row['size']:>6} {row['mean_s']:.5f}s")
    return 0


def cmd_dump_heatmap(args: argparse.Namespace, config: Config) -> int:
    spec = config.grid.to_spec()
    if args.scene:
        scene = load_scene(args.scene)
    else:
        scene = generate_scene(config.scene.to_spec(config.seed), spec, config.rig.build())
    times = scene.times()
    if not 0 <= args.frame < len(times):
        raise ConfigError(f"frame {args.frame} outside the scene's {len(times)} frames")
    frame = make_frame(scene, times[args.frame], spec, tuple(config.rig.feature_size), config.rig.feature_channels,
                       config.model.n_classes)
    detector = load_detector(config, args.checkpoint) if args.checkpoint else build_detector(config)
    output = detector.forward(frame)
    target = draw_gt_heatmap(frame.boxes, spec, config.model.gt_radius).numpy()
    write_heatmap_csv(os.path.join(args.out_dir, "heatmap_pred.csv"), output.heatmap.numpy())
    write_heatmap_csv(os.path.join(args.out_dir, "heatmap_gt.csv"), target)
    save_heatmap_svg(os.path.join(args.out_dir, "heatmap_pred.svg"), output.heatmap.numpy(), spec,
                     output.selections, frame.boxes, "predicted heatmap")
    save_heatmap_svg(os.path.join(args.out_dir, "heatmap_gt.svg"), target, spec, None, frame.boxes,
                     "target heatmap")
    print(f"wrote heatmaps for t={frame.timestamp:g}s to {args.out_dir}")
    return 0


def cmd_gen_scene(args: argparse.Namespace, config: Config) -> int:
    spec = config.grid.to_spec()
    scene = generate_scene(config.scene.to_spec(config.seed), spec, config.rig.build())
    path = args.output or os.path.join(args.out_dir, "scene.json")
    save_scene(path, scene)
    if args.dump_features:
        frame = make_frame(scene, 0.0, spec, tuple(config.rig.feature_size), config.rig.feature_channels,
                           config.model.n_classes)
        for view, fmap in enumerate(frame.feature_maps):
            save_tensor(os.path.join(args.out_dir, f"features_t0_view{view}.tensor"), fmap)
    logger.info("wrote scene with %d objects to %s", len(scene.objects), path)
    print(path)
    return 0


def cmd_ablate(args: argparse.Namespace, config: Config) -> int:
    rows = run_study(args.study, config, args.steps, args.out_dir)
    write_report_csv(os.path.join(args.out_dir, f"ablation_{args.study}.csv"), rows)
    for row in rows:
        print(f"{row['variant']:<18} AP@2m {row.get('ap@2', 0.0):.3f} ATE {row['ate']:.3f} AVE {row['ave']:.3f}")
    return 0


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "dump-heatmap": cmd_dump_heatmap,
    "gen-scene": cmd_gen_scene,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        config = resolve_config(args)
        os.makedirs(args.out_dir, exist_ok=True)
        return COMMANDS[args.command](args, config)
    except ConfigError as e:
        logger.error("%s", e)
        return 2
    except ProjdetError as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
