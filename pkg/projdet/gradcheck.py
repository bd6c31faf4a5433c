"""Finite-difference gradient checking and the built-in check suite."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .exceptions import GradCheckError, NonFiniteError
from .tensor import Tensor, scale_gradient

logger = logging.getLogger(__name__)

ScalarOp = Callable[[], Tensor]


@dataclass
class GradCheckReport:
    """Outcome of one gradient check.

    Attributes:
        max_rel_error: Worst relative error over every checked coordinate
        passed: Whether ``max_rel_error`` is below the tolerance
        per_input: Worst relative error per input name
    """

    max_rel_error: float
    passed: bool
    per_input: Dict[str, float] = field(default_factory=dict)
    name: str = ""


def _evaluate(op: ScalarOp) -> float:
    out = op()
    value = out.item() if isinstance(out, Tensor) else float(out)
    if not np.isfinite(value):
        raise NonFiniteError("gradient check evaluated a non-finite loss")
    return value


def grad_check(op: ScalarOp, inputs: Sequence[Tensor], epsilon: float = 1e-5, tolerance: float = 1e-4,
               floor: float = 1e-8, names: Optional[Sequence[str]] = None, name: str = "") -> GradCheckReport:
    """
    Compare analytic gradients with central finite differences.

    ``op`` takes no arguments and closes over ``inputs``; each input's data is
    perturbed in place and restored afterwards. The relative error of a
    coordinate is ``|a - n| / max(|a|, |n|, floor)``.

    Args:
        op: Callable returning a scalar tensor
        inputs: Tensors to differentiate with respect to; must require grad
        epsilon: Finite-difference step
        tolerance: Largest accepted relative error
        floor: Denominator floor
        names: Labels for the report, defaults to ``input0``, ``input1``...
        name: Label of the check

    Returns:
        GradCheckReport

    Raises:
        GradCheckError: If two evaluations at the same point disagree
    """
    inputs = list(inputs)
    names = list(names) if names is not None else [t.name or f"input{i}" for i, t in enumerate(inputs)]

    first = _evaluate(op)
    if _evaluate(op) != first:
        raise GradCheckError(f"operation '{name or 'op'}' is not repeatable")

    for tensor in inputs:
        tensor.grad = None
    loss = op()
    if isinstance(loss, Tensor) and loss.requires_grad:
        loss.backward()

    per_input = {}
    for label, tensor in zip(names, inputs):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        worst = 0.0
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + epsilon
            plus = _evaluate(op)
            flat[index] = original - epsilon
            minus = _evaluate(op)
            flat[index] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            exact = analytic.reshape(-1)[index]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, error)
        per_input[label] = worst
        tensor.grad = None

    max_error = max(per_input.values(), default=0.0)
    report = GradCheckReport(max_error, max_error < tolerance, per_input, name)
    logger.debug("grad check %s: max relative error %.3e", name or "op", max_error)
    return report


class CheckSuite:
    """
    Named collection of gradient checks run by ``projdet gradcheck``.

    Each entry builds its own inputs from a seeded generator so the suite is
    reproducible. ``corrupt`` names an entry whose analytic gradient is
    deliberately scaled, which must make that entry fail.
    """

    def __init__(self, seed: int = 0, epsilon: float = 1e-5, tolerance: float = 1e-4):
        self.seed = seed
        self.epsilon = epsilon
        self.tolerance = tolerance
        self._checks: Dict[str, Callable[[np.random.Generator, Callable[[Tensor], Tensor]], tuple]] = {}

    def register(self, builder: Callable):
        """Add a check named after ``builder``; ``builder(rng, hook)`` returns ``(op, inputs, names)``."""
        self._checks[builder.__name__] = builder
        return builder

    @property
    def names(self) -> List[str]:
        return list(self._checks)

    def run(self, only: Optional[Sequence[str]] = None, corrupt: Optional[str] = None) -> List[GradCheckReport]:
        reports = []
        for name, builder in self._checks.items():
            if only and name not in only:
                continue
            rng = np.random.default_rng(self.seed)
            hook = (lambda t: scale_gradient(t, 1.5)) if name == corrupt else (lambda t: t)
            op, inputs, labels = builder(rng, hook)
            report = grad_check(op, inputs, self.epsilon, self.tolerance, names=labels, name=name)
            logger.info("%-24s max_rel_error=%.3e %s", name, report.max_rel_error,
                        "ok" if report.passed else "FAILED")
            reports.append(report)
        return reports


def default_suite(seed: int = 0, zero_weights: bool = False, epsilon: float = 1e-5,
                  tolerance: float = 1e-4) -> CheckSuite:
    """
    Gradient checks of every differentiable building block, smallest first.

    Args:
        seed: Seed of every check's inputs
        zero_weights: Run the decoder check with all model weights at zero
    """
    from .attention import MhaWeights, PcaWeights, PositionEncoder, QuerySet, mha, pca_forward
    from .bev_init import BevGridSpec, HeatmapNet, draw_gt_heatmap, gaussian_focal_loss
    from .detector import Box3D, DecoderConfig, Detector
    from .functional import bilinear_sample, conv2d, layer_norm, linear, softmax
    from .geometry import EgoPose, Pose, default_rig
    from .synth import Frame
    from .tensor import parameter

    suite = CheckSuite(seed, epsilon, tolerance)

    @suite.register
    def linear_map(rng, hook):
        x, w, b = parameter(rng.normal(size=(5, 3))), parameter(rng.normal(size=(4, 3))), parameter(rng.normal(size=4))
        return lambda: hook(linear(x, w, b).sum()), [x, w, b], ["x", "weight", "bias"]

    @suite.register
    def bilinear(rng, hook):
        fmap = parameter(rng.normal(size=(2, 4, 5)))
        uv = parameter(rng.uniform([-0.6, -0.6], [4.6, 3.6], size=(6, 2)))
        weights = rng.normal(size=(6, 2))
        return lambda: hook((bilinear_sample(fmap, uv) * weights).sum()), [fmap, uv], ["feature_map", "uv"]

    @suite.register
    def softmax_last_axis(rng, hook):
        logits = parameter(rng.normal(size=(3, 5)))
        weights = rng.normal(size=(3, 5))
        return lambda: hook((softmax(logits) * weights).sum()), [logits], ["logits"]

    @suite.register
    def layer_normalization(rng, hook):
        x, g, b = parameter(rng.normal(size=(3, 6))), parameter(rng.normal(size=6)), parameter(rng.normal(size=6))
        weights = rng.normal(size=(3, 6))
        return lambda: hook((layer_norm(x, g, b) * weights).sum()), [x, g, b], ["x", "gamma", "beta"]

    @suite.register
    def convolution(rng, hook):
        x, w, b = (parameter(rng.normal(size=(2, 5, 4))), parameter(rng.normal(size=(3, 2, 3, 3))),
                   parameter(rng.normal(size=3)))
        weights = rng.normal(size=(3, 5, 4))
        return lambda: hook((conv2d(x, w, b) * weights).sum()), [x, w, b], ["x", "weight", "bias"]

    @suite.register
    def multi_head_attention(rng, hook):
        weights = MhaWeights(4, 2, rng)
        q, k, v = (parameter(rng.normal(size=(2, 4))), parameter(rng.normal(size=(3, 4))),
                   parameter(rng.normal(size=(3, 4))))
        mix = rng.normal(size=(2, 4))
        names = ["query", "key", "value"] + [n for n, _ in weights.named_parameters()]
        return (lambda: hook((mha(q, k, v, weights) * mix).sum()), [q, k, v] + weights.parameters(), names)

    grid = BevGridSpec((-4.0, 4.0), (-4.0, 4.0), (-1.0, 3.0), (2, 4, 4))

    @suite.register
    def heatmap_focal_loss(rng, hook):
        target = draw_gt_heatmap([np.array([0.5, -1.5, 0.0])], grid, radius=1).values.data
        p = parameter(rng.uniform(0.05, 0.95, size=(4, 4)))
        return lambda: hook(gaussian_focal_loss(p, target)), [p], ["probabilities"]

    @suite.register
    def heatmap_network(rng, hook):
        net = HeatmapNet(3, rng, hidden=4)
        net.head.weight.data = rng.normal(scale=0.5, size=net.head.weight.shape)
        bev = parameter(rng.normal(size=(3, 4, 4)))
        target = draw_gt_heatmap([np.array([0.5, -1.5, 0.0])], grid, radius=1).values.data
        names = ["bev"] + [n for n, _ in net.named_parameters()]
        return lambda: hook(gaussian_focal_loss(net(bev, grid), target)), [bev] + net.parameters(), names

    rig = default_rig(2, (16, 16))

    @suite.register
    def projective_attention(rng, hook):
        weights = PcaWeights(4, 2, 2, rng)
        weights.offset_head.weight.data = rng.normal(scale=0.1, size=weights.offset_head.weight.shape)
        weights.offset_head.bias.data = rng.normal(scale=0.1, size=weights.offset_head.bias.shape)
        encoder = PositionEncoder(4, grid.lower, grid.upper, rng)
        centers = np.array([[4.0, 0.5, 1.0], [-5.0, -0.3, 1.2]])
        features = parameter(rng.normal(size=(2, 4)))
        maps = [parameter(rng.normal(size=(4, 8, 8))) for _ in range(rig.n_views)]
        mix = rng.normal(size=(2, 4))

        def op():
            queries = QuerySet(features, centers, encoder(centers).detach())
            return hook((pca_forward(queries, maps, rig, weights) * mix).sum())

        names = ["queries", "map0", "map1"] + [n for n, _ in weights.named_parameters()]
        return op, [features] + maps + weights.parameters(), names

    @suite.register
    def decoder_loss(rng, hook):
        config = DecoderConfig(layers=1, channels=4, heads=2, points=2, n_query=3, n_classes=2, ffn=8,
                               heatmap_hidden=4)
        detector = Detector(config, grid, 4, rng)
        layer = detector.layers[0]
        for tensor in (layer.reg_head.weight, layer.reg_head.bias, layer.cross.offset_head.weight):
            tensor.data = rng.normal(scale=0.1, size=tensor.shape)
        if zero_weights:
            for tensor in detector.parameters():
                tensor.data = np.zeros_like(tensor.data)
        frame = Frame(0.0, [rng.normal(size=(4, 8, 8)) for _ in range(rig.n_views)], rig,
                      EgoPose(Pose.identity(), 0.0),
                      [Box3D((2.0, 0.5, 0.8), (1.9, 4.5, 1.6), 0.3, (0.0, 0.0), 1),
                       Box3D((-2.5, -1.0, 0.9), (0.7, 0.7, 1.75), -1.0, (0.0, 0.0), 0)])
        checked = layer.parameters()

        def op():
            loss, _ = detector.loss(frame, detector.forward(frame))
            return hook(loss)

        return op, checked, [f"layers.0.{n}" for n, _ in layer.named_parameters()]

    return suite
