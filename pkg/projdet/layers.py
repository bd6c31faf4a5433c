"""Parameter containers: modules, linear maps, convolutions and normalization."""

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .exceptions import CheckpointError, NonFiniteError, ShapeError
from .functional import conv2d, layer_norm, linear
from .tensor import ArrayLike, Tensor, as_tensor, parameter, relu


class Module:
    """
    Base class for anything that owns trainable tensors.

    Parameters are discovered by walking public attributes: trainable
    tensors, nested modules, and lists of either. Attribute insertion order
    fixes the parameter order, so traversal is deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full_name = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full_name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full_name + ".")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full_name}.{index}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full_name}.{index}", item

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        """
        Copy arrays into the module's parameters.

        Args:
            state: Mapping of parameter name to array
            strict: If True, missing or unexpected names are an error

        Raises:
            CheckpointError: If names or shapes do not match
        """
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise CheckpointError(f"state mismatch; missing={missing} unexpected={unexpected}")
        for name, array in state.items():
            if name not in own:
                continue
            if own[name].shape != tuple(array.shape):
                raise CheckpointError(f"shape mismatch for '{name}': {own[name].shape} vs {array.shape}")
            own[name].data = np.array(array, dtype=own[name].data.dtype)


class LinearMap(Module):
    """
    Affine map ``y = x W^T + b`` with ``W`` of shape ``[out, in]``.

    Args:
        in_features: Input width
        out_features: Output width
        rng: Generator used for the uniform fan-in initialization
        bias: Whether to carry a bias vector
        init: ``"uniform"`` (default) or ``"zeros"``
    """

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None,
                 bias: bool = True, init: str = "uniform"):
        if init == "zeros" or rng is None:
            weight = np.zeros((out_features, in_features))
        else:
            bound = 1.0 / np.sqrt(in_features)
            weight = rng.uniform(-bound, bound, size=(out_features, in_features))
        self.weight = parameter(weight)
        self.bias = parameter(np.zeros(out_features)) if bias else None

    @classmethod
    def from_arrays(cls, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> "LinearMap":
        """
        Build a map from explicit arrays.

        Raises:
            NonFiniteError: If the weight or bias holds NaN or inf
            ShapeError: If the bias length does not match the output width
        """
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 2:
            raise ShapeError(f"weight must be [out, in], got {weight.shape}")
        if not np.all(np.isfinite(weight)) or (bias is not None and not np.all(np.isfinite(bias))):
            raise NonFiniteError("linear map weights must be finite")
        if bias is not None and np.shape(bias) != (weight.shape[0],):
            raise ShapeError(f"bias shape {np.shape(bias)} does not match {weight.shape[0]} outputs")
        layer = cls(weight.shape[1], weight.shape[0], bias=bias is not None, init="zeros")
        layer.weight.data = weight.copy()
        if bias is not None:
            layer.bias.data = np.array(bias, dtype=np.float64)
        return layer

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: ArrayLike) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Stride-1 same-padded convolution with an odd square kernel."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 rng: Optional[np.random.Generator] = None, init: str = "uniform"):
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if init == "identity":
            if in_channels != out_channels or kernel_size != 1:
                raise ShapeError("identity init needs a square 1x1 convolution")
            weight = np.eye(out_channels).reshape(shape)
        elif init == "zeros" or rng is None:
            weight = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(in_channels * kernel_size * kernel_size)
            weight = rng.uniform(-bound, bound, size=shape)
        self.weight = parameter(weight)
        self.bias = parameter(np.zeros(out_channels))

    def __call__(self, x: ArrayLike) -> Tensor:
        return conv2d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self._eps)


class TinyEncoder(Module):
    """Two 3x3 convolutions with a ReLU between them, applied per camera view."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, hidden: int = 32):
        self.conv1 = Conv2d(in_channels, hidden, 3, rng)
        self.conv2 = Conv2d(hidden, out_channels, 3, rng)

    def __call__(self, x: ArrayLike) -> Tensor:
        return self.conv2(relu(self.conv1(as_tensor(x))))
