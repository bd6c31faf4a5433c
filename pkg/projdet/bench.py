"""Micro-benchmarks of projective attention and volumetric sampling."""

import logging
import time
from typing import Callable, Dict, List, Sequence

import numpy as np

from .attention import PcaWeights, PositionEncoder, QuerySet, pca_forward
from .bev_init import BevGridSpec, build_projected_grid, volumetric_sample
from .config import Config
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

QUERY_COUNTS = (25, 50, 100, 200, 400)
GRID_SHAPES = ((8, 8, 2), (16, 16, 4), (32, 32, 4))


def time_call(fn: Callable[[], object], repeats: int = 5) -> List[float]:
    """Wall-clock seconds of ``repeats`` calls after one warm-up call."""
    fn()
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return timings


def _row(kernel: str, size: int, timings: Sequence[float]) -> Dict[str, object]:
    timings = np.asarray(timings)
    return {"kernel": kernel, "size": size, "mean_s": float(timings.mean()), "std_s": float(timings.std()),
            "min_s": float(timings.min()), "repeats": len(timings)}


def _features(config: Config, rng: np.random.Generator) -> List[Tensor]:
    h, w = config.rig.feature_size
    return [Tensor(rng.normal(size=(config.model.channels, h, w))) for _ in range(config.rig.n_cameras)]


def bench_pca(config: Config, query_counts: Sequence[int] = QUERY_COUNTS, repeats: int = 5) -> List[Dict[str, object]]:
    """Time ``pca_forward`` against the query count."""
    rng = np.random.default_rng(config.seed)
    spec = config.grid.to_spec()
    rig = config.rig.build()
    model = config.model
    weights = PcaWeights(model.channels, model.heads, model.points, rng)
    encoder = PositionEncoder(model.channels, spec.lower, spec.upper, rng)
    features = _features(config, rng)
    rows = []
    for n in query_counts:
        centers = rng.uniform(spec.lower, spec.upper, size=(n, 3))
        queries = QuerySet(Tensor(rng.normal(size=(n, model.channels))), centers, encoder(centers))

        def run():
            with no_grad():
                return pca_forward(queries, features, rig, weights)

        row = _row("pca_forward", n, time_call(run, repeats))
        logger.info("pca_forward n_query=%d mean %.5fs", n, row["mean_s"])
        rows.append(row)
    return rows


def bench_volumetric(config: Config, shapes: Sequence[Sequence[int]] = GRID_SHAPES,
                     repeats: int = 5) -> List[Dict[str, object]]:
    """Time ``volumetric_sample`` against the grid size ``(X, Y, Z)``."""
    rng = np.random.default_rng(config.seed)
    rig = config.rig.build()
    features = _features(config, rng)
    rows = []
    for x, y, z in shapes:
        spec = BevGridSpec(config.grid.x_range, config.grid.y_range, config.grid.z_range, (z, y, x))
        grid = build_projected_grid(spec, rig)

        def run():
            with no_grad():
                return volumetric_sample(features, grid)

        row = _row("volumetric_sample", x * y * z, time_call(run, repeats))
        logger.info("volumetric_sample cells=%d mean %.5fs", x * y * z, row["mean_s"])
        rows.append(row)
    return rows


def run_bench(config: Config, repeats: int = 5) -> List[Dict[str, object]]:
    return bench_pca(config, repeats=repeats) + bench_volumetric(config, repeats=repeats)
