########################################################################################
#
#    Copyright 2026 The blockzoo developers
#
#    This file is part of blockzoo.
#
#    This program is free software: you can redistribute it and/or modify
#    it under the terms of the GNU Lesser General Public License as published by
#    the Free Software Foundation, either version 3 of the License, or
#    (at your option) any later version.
#
#    This program is distributed in the hope that it will be useful,
#    but WITHOUT ANY WARRANTY; without even the implied warranty of
#    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#    GNU Lesser General Public License for more details.
#
#    You should have received a copy of the GNU Lesser General Public License
#    along with this program. If not, see <http://www.gnu.org/licenses/>.
#
########################################################################################
"""
Small numpy neural network core with hand written backpropagation.

Layers keep the activations they need for the backward pass, so a network is used
as ``forward`` then ``backward`` on the same batch. Images are ``(N, H, W, C)``
arrays of floats in ``[0, 1]``.
"""

# 1. Standard library imports:
import dataclasses
import json
import logging
import math
import operator
import os
import struct
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

# 2. Known third party imports:
import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

# 3. Local imports in the relative form:
from .config import reject_unknown
from .crc import CRC
from .dataset import DatasetManifest, box_downsample, nearest_upsample
from .errors import ChecksumError, ConfigurationError, ShapeError, TrainingError
from .scene import ATTRIBUTE_RANGES, ATTRIBUTES

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"BZCK"
CHECKPOINT_VERSION = 1
TRUNK_CHANNELS = (8, 16, 32)
FLOW_RESOLUTION = 16

# Probe head: the nine range attributes, then sin and cos of the yaw.
RANGE_ATTRIBUTES = tuple(a for a in ATTRIBUTES if a != "rotation_yaw")
YAW_INDEX = ATTRIBUTES.index("rotation_yaw")


# Layers ###############################################################################


class Layer:
    """Base layer without parameters."""

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2D(Layer):
    """
    Square convolution over ``(N, H, W, C)`` inputs, He-uniform initialized.

    :param in_channels: Input channels.
    :param out_channels: Output channels.
    :param rng: Generator drawing the initial weights.
    :param kernel: Kernel size, defaults to ``3``
    :param stride: Stride, defaults to ``2``
    :param padding: Zero padding, defaults to ``1``
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel: int = 3,
        stride: int = 2,
        padding: int = 1,
    ):
        super().__init__()
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = kernel * kernel * in_channels
        limit = math.sqrt(6.0 / fan_in)
        self.params["W"] = rng.uniform(-limit, limit, (fan_in, out_channels))
        self.params["b"] = np.zeros(out_channels)

    def forward(self, x: np.ndarray) -> np.ndarray:
        k, s, p = self.kernel, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        n, ho, wo, c = windows.shape[:4]
        self._cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
        self._geometry = (xp.shape, n, ho, wo, c)
        out = self._cols @ self.params["W"] + self.params["b"]
        return out.reshape(n, ho, wo, -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        k, s, p = self.kernel, self.stride, self.padding
        padded_shape, n, ho, wo, c = self._geometry
        flat = dout.reshape(n * ho * wo, -1)
        self.grads["W"] = self._cols.T @ flat
        self.grads["b"] = flat.sum(axis=0)
        dcols = (flat @ self.params["W"].T).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros(padded_shape)
        for i in range(k):
            for j in range(k):
                rows = slice(i, i + s * ho, s)
                cols = slice(j, j + s * wo, s)
                dxp[:, rows, cols, :] += dcols[:, :, :, i, j, :]
        return dxp[:, p : padded_shape[1] - p, p : padded_shape[2] - p, :]


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._positive = x > 0
        return np.where(self._positive, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._positive, dout, 0.0)


class GlobalAveragePool(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, h, w, c = self._shape
        return np.broadcast_to(dout[:, None, None, :] / (h * w), self._shape).copy()


class Dense(Layer):
    """
    Affine layer.

    :param in_features: Input width.
    :param out_features: Output width.
    :param rng: Generator drawing the initial weights.
    """

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        limit = math.sqrt(6.0 / in_features)
        self.params["W"] = rng.uniform(-limit, limit, (in_features, out_features))
        self.params["b"] = np.zeros(out_features)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class Clamp(Layer):
    """
    Elementwise clamp to per-column bounds; the range squash of the probe head.

    :param low: Lower bound per column.
    :param high: Upper bound per column.
    """

    def __init__(self, low: Sequence[float], high: Sequence[float]):
        super().__init__()
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._inside = (x > self.low) & (x < self.high)
        return np.clip(x, self.low, self.high)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._inside, dout, 0.0)


# Losses ###############################################################################


def bce_with_logits(
    logits: np.ndarray, targets: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    Mean binary cross entropy on logits.

    :returns: Loss and its gradient with respect to ``logits``.
    """
    logits = logits.reshape(-1)
    loss = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    grad = (sigmoid(logits) - targets) / logits.size
    return float(loss.mean()), grad


def mean_squared_error(
    predictions: np.ndarray, targets: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Mean over all entries of the squared error, and its gradient."""
    diff = predictions - targets
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out


# Optimizers ###########################################################################


class SGD:
    """
    Stochastic gradient descent with momentum and cosine learning rate decay.

    :param learning_rate: Initial learning rate.
    :param momentum: Momentum coefficient.
    :param total_steps: Steps over which the rate decays to zero.
    """

    def __init__(self, learning_rate: float, momentum: float, total_steps: int):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.total_steps = max(1, total_steps)
        self.step_count = 0
        self._velocity: Optional[List[np.ndarray]] = None

    def current_rate(self) -> float:
        progress = min(self.step_count, self.total_steps) / self.total_steps
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        rate = self.current_rate()
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v -= rate * g
            p += v
        self.step_count += 1


class Adam:
    """
    Adam optimizer.

    :param learning_rate: Step size.
    :param beta1: First moment decay, defaults to ``0.9``
    :param beta2: Second moment decay, defaults to ``0.999``
    :param epsilon: Denominator offset, defaults to ``1e-8``
    """

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.step_count = 0
        self._m: Optional[List[np.ndarray]] = None
        self._v: Optional[List[np.ndarray]] = None

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (
                np.sqrt(v / correction2) + self.epsilon
            )


# Checkpoints ##########################################################################


def save_checkpoint(
    path: Union[str, os.PathLike], descriptor: Dict[str, Any], arrays: List[np.ndarray]
) -> Path:
    """
    Write a versioned binary checkpoint.

    Layout: magic ``BZCK``, format version (uint16), descriptor length (uint32),
    UTF-8 JSON descriptor with the array shapes, little-endian float32 parameters,
    and a two byte CRC-16-CCITT of everything before it.

    :param path: Output file.
    :param descriptor: Architecture descriptor, JSON serializable.
    :param arrays: Parameter arrays in a fixed order.
    :returns: The written path.
    """
    descriptor = dict(descriptor, shapes=[list(a.shape) for a in arrays])
    encoded = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    payload = bytearray(CHECKPOINT_MAGIC)
    payload += struct.pack("<HI", CHECKPOINT_VERSION, len(encoded))
    payload += encoded
    for array in arrays:
        payload += np.ascontiguousarray(array, dtype="<f4").tobytes()
    payload += CRC(payload).get_crc_bytes()
    path = Path(path)
    path.write_bytes(bytes(payload))
    return path


def load_checkpoint(
    path: Union[str, os.PathLike]
) -> Tuple[Dict[str, Any], List[np.ndarray]]:
    """
    Read a checkpoint written by ``save_checkpoint``.

    :returns: The descriptor and the parameter arrays as float64.
    :raises ChecksumError: On a wrong magic, version or checksum.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise ChecksumError(f"{path} is not a blockzoo checkpoint.")
    CRC(data[:-2]).verify(data[-2:])
    version, length = struct.unpack("<HI", data[4:10])
    if version != CHECKPOINT_VERSION:
        raise ChecksumError(f"Unsupported checkpoint version {version}.")
    descriptor = json.loads(data[10 : 10 + length].decode("utf-8"))
    offset = 10 + length
    arrays = []
    for shape in descriptor["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        chunk = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        arrays.append(chunk.astype(np.float64).reshape(shape))
        offset += 4 * count
    return descriptor, arrays


# Hyperparameters ######################################################################


class ClassifierHyper:
    """
    Training hyperparameters of the convolutional models.

    :param learning_rate: Initial SGD learning rate, defaults to ``0.05``
    :param momentum: SGD momentum (``0-1``), defaults to ``0.9``
    :param epochs: Passes over the training set, defaults to ``30``
    :param batch_size: Minibatch size, defaults to ``32``
    :param seed: Seed of initialization and shuffling, defaults to ``0``
    """

    def __init__(
        self,
        learning_rate: float = None,
        momentum: float = None,
        epochs: int = None,
        batch_size: int = None,
        seed: int = None,
    ):
        if learning_rate is None:
            learning_rate = 0.05
        self.learning_rate = learning_rate
        if momentum is None:
            momentum = 0.9
        self.momentum = momentum
        if epochs is None:
            epochs = 30
        self.epochs = epochs
        if batch_size is None:
            batch_size = 32
        self.batch_size = batch_size
        if seed is None:
            seed = 0
        self.seed = seed

    learning_rate = property(operator.attrgetter("_learning_rate"))

    @learning_rate.setter
    def learning_rate(self, r):
        if r is None:
            raise ValueError("Learning rate cannot be empty.")
        if not isinstance(r, (int, float)) or isinstance(r, bool):
            raise TypeError(f"Learning rate must be a number. {type(r)} was given.")
        if not r > 0:
            raise ConfigurationError(f"Learning rate must be positive. {r} was given.")
        self._learning_rate = float(r)

    momentum = property(operator.attrgetter("_momentum"))

    @momentum.setter
    def momentum(self, m):
        if m is None:
            raise ValueError("Momentum cannot be empty.")
        if not isinstance(m, (int, float)) or isinstance(m, bool):
            raise TypeError(f"Momentum must be a number. {type(m)} was given.")
        if not 0 <= m < 1:
            raise ConfigurationError(f"Momentum must be within [0, 1). {m} was given.")
        self._momentum = float(m)

    epochs = property(operator.attrgetter("_epochs"))

    @epochs.setter
    def epochs(self, e):
        if e is None:
            raise ValueError("Epochs cannot be empty.")
        if not isinstance(e, int) or isinstance(e, bool):
            raise TypeError(f"Epochs must be an integer. {type(e)} was given.")
        if e < 1:
            raise ConfigurationError(f"Epochs must be at least 1. {e} was given.")
        self._epochs = e

    batch_size = property(operator.attrgetter("_batch_size"))

    @batch_size.setter
    def batch_size(self, b):
        if b is None:
            raise ValueError("Batch size cannot be empty.")
        if not isinstance(b, int) or isinstance(b, bool):
            raise TypeError(f"Batch size must be an integer. {type(b)} was given.")
        if b < 1:
            raise ConfigurationError(f"Batch size must be at least 1. {b} was given.")
        self._batch_size = b

    seed = property(operator.attrgetter("_seed"))

    @seed.setter
    def seed(self, s):
        if s is None:
            raise ValueError("Seed cannot be empty.")
        if not isinstance(s, int) or isinstance(s, bool):
            raise TypeError(f"Seed must be an integer. {type(s)} was given.")
        self._seed = s

    def to_dict(self) -> Dict[str, Any]:
        return {
            "learning_rate": self._learning_rate,
            "momentum": self._momentum,
            "epochs": self._epochs,
            "batch_size": self._batch_size,
            "seed": self._seed,
        }

    @classmethod
    def from_dict(cls, table: Dict[str, Any]):
        reject_unknown(table, cls().to_dict(), f"[{cls.table_name}]")
        return cls(**table)

    table_name = "classifier"


class ProbeHyper(ClassifierHyper):
    """
    Training hyperparameters of the attribute probe.

    Takes every ``ClassifierHyper`` parameter, with a learning rate default of ``0.02``,
    and additionally:

    :param match_flow_resolution: Train on images passed through the counterfactual \
    display path (16x16 box filter, nearest upsampling), defaults to ``True``
    """

    table_name = "probe"

    def __init__(self, match_flow_resolution: bool = None, **kwargs):
        kwargs.setdefault("learning_rate", 0.02)
        super().__init__(**kwargs)
        if match_flow_resolution is None:
            match_flow_resolution = True
        self.match_flow_resolution = match_flow_resolution

    match_flow_resolution = property(operator.attrgetter("_match_flow_resolution"))

    @match_flow_resolution.setter
    def match_flow_resolution(self, m):
        if m is None:
            raise ValueError("Match flow resolution cannot be empty.")
        if not isinstance(m, bool):
            raise TypeError(
                f"Match flow resolution must be a boolean. {type(m)} was given."
            )
        self._match_flow_resolution = m

    def to_dict(self) -> Dict[str, Any]:
        document = super().to_dict()
        document["match_flow_resolution"] = self._match_flow_resolution
        return document


# Networks #############################################################################


class Network:
    """
    A stack of layers with a fixed input shape.

    :param input_shape: ``(H, W, C)`` of the images the network accepts.
    :param seed: Seed of the weight initialization.
    """

    architecture = "network"

    def __init__(self, input_shape: Tuple[int, int, int], seed: int = 0):
        self.input_shape = tuple(int(v) for v in input_shape)
        self.seed = seed
        self.layers: List[Layer] = self._build(np.random.default_rng(seed))
        self.last_output: Optional[np.ndarray] = None

    def _build(self, rng: np.random.Generator) -> List[Layer]:
        raise NotImplementedError

    def _trunk(self, rng: np.random.Generator) -> List[Layer]:
        layers: List[Layer] = []
        channels = self.input_shape[2]
        for out in TRUNK_CHANNELS:
            layers += [Conv2D(channels, out, rng), ReLU()]
            channels = out
        return layers

    def check_input(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        if images.ndim != 4 or images.shape[1:] != self.input_shape:
            shape = ", ".join(map(str, self.input_shape))
            raise ShapeError(
                f"Expected images of shape (N, {shape}), {images.shape} was given."
            )
        return images

    def forward(self, images: np.ndarray) -> np.ndarray:
        out = self.check_input(images)
        for layer in self.layers:
            out = layer.forward(out)
        self.last_output = out
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def parameters(self) -> List[np.ndarray]:
        return [layer.params[k] for layer in self.layers for k in sorted(layer.params)]

    def gradients(self) -> List[np.ndarray]:
        return [layer.grads[k] for layer in self.layers for k in sorted(layer.params)]

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def loss(self, images: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
        raise NotImplementedError

    def loss_and_gradients(
        self, images: np.ndarray, targets: np.ndarray
    ) -> Tuple[float, List[np.ndarray]]:
        """Loss on a batch and the gradient of every parameter array."""
        value, dout = self.loss(images, targets)
        self.backward(dout)
        return value, self.gradients()

    def activations(self, images: np.ndarray) -> np.ndarray:
        """Output of the last convolution block, shape ``(N, h, w, 32)``."""
        out = self.check_input(images)
        for layer in self.layers[: 2 * len(TRUNK_CHANNELS)]:
            out = layer.forward(out)
        return out

    def descriptor(self) -> Dict[str, Any]:
        return {
            "architecture": self.architecture,
            "input_shape": list(self.input_shape),
            "seed": self.seed,
        }

    def save(self, path: Union[str, os.PathLike]) -> Path:
        return save_checkpoint(path, self.descriptor(), self.parameters())

    @classmethod
    def load(cls, path: Union[str, os.PathLike]):
        """
        Restore a network saved with ``save``.

        :raises ChecksumError: If the file holds another architecture.
        """
        descriptor, arrays = load_checkpoint(path)
        if descriptor.get("architecture") != cls.architecture:
            raise ChecksumError(
                f"{path} holds a {descriptor.get('architecture')} checkpoint,"
                f" not {cls.architecture}."
            )
        model = cls(tuple(descriptor["input_shape"]), descriptor.get("seed", 0))
        for target, value in zip(model.parameters(), arrays):
            target[...] = value
        return model


class ConvClassifier(Network):
    """
    Three stride-2 convolutions, global average pooling and one logit.

    A positive logit means Stretchy.
    """

    architecture = "conv_classifier"

    def _build(self, rng: np.random.Generator) -> List[Layer]:
        return self._trunk(rng) + [
            GlobalAveragePool(),
            Dense(TRUNK_CHANNELS[-1], 1, rng),
        ]

    def predict_logits(self, images: np.ndarray) -> np.ndarray:
        """Logits of a batch, shape ``(N,)``."""
        return self.forward(images).reshape(-1)

    def predict_logit(self, image: np.ndarray) -> float:
        """
        Logit of one image.

        :raises ShapeError: If the image does not match the training dimensions.
        """
        return float(self.predict_logits(image)[0])

    def loss(self, images, targets):
        value, grad = bce_with_logits(self.forward(images), np.asarray(targets, float))
        return value, grad.reshape(-1, 1)


def encode_attributes(values: np.ndarray) -> np.ndarray:
    """
    Map ``(N, 10)`` attribute values to the probe's normalized training targets.

    Range attributes become ``(v - low) / (high - low)``; the yaw becomes its sine
    and cosine.
    """
    columns = []
    for name in RANGE_ATTRIBUTES:
        low, high = ATTRIBUTE_RANGES[name]
        columns.append((values[:, ATTRIBUTES.index(name)] - low) / (high - low))
    yaw = values[:, YAW_INDEX]
    columns += [np.sin(yaw), np.cos(yaw)]
    return np.stack(columns, axis=1)


def decode_attributes(outputs: np.ndarray) -> np.ndarray:
    """Inverse of ``encode_attributes``; yaw is ``atan2(sin, cos)`` in ``[0, 2pi)``."""
    values = np.empty((outputs.shape[0], len(ATTRIBUTES)))
    for column, name in enumerate(RANGE_ATTRIBUTES):
        low, high = ATTRIBUTE_RANGES[name]
        values[:, ATTRIBUTES.index(name)] = low + (high - low) * outputs[:, column]
    yaw = np.arctan2(outputs[:, -2], outputs[:, -1])
    values[:, YAW_INDEX] = np.mod(yaw, 2.0 * math.pi)
    return values


def circular_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Signed angle difference ``a - b`` wrapped to ``(-pi, pi]``."""
    return math.pi - np.mod(math.pi - (a - b), 2.0 * math.pi)


class AttributeProbe(Network):
    """
    Regressor of all ten generative attributes from an image.

    The head outputs the nine range attributes normalized to ``[0, 1]`` and the
    yaw as a ``(sin, cos)`` pair, each clamped to its range.
    """

    architecture = "attribute_probe"

    def _build(self, rng: np.random.Generator) -> List[Layer]:
        outputs = len(RANGE_ATTRIBUTES) + 2
        low = [0.0] * len(RANGE_ATTRIBUTES) + [-1.0, -1.0]
        high = [1.0] * outputs
        return self._trunk(rng) + [
            GlobalAveragePool(),
            Dense(TRUNK_CHANNELS[-1], outputs, rng),
            Clamp(low, high),
        ]

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Attribute values of shape ``(N, 10)`` in ``ATTRIBUTES`` order."""
        return decode_attributes(self.forward(images))

    def loss(self, images, targets):
        return mean_squared_error(self.forward(images), np.asarray(targets, float))


# Training #############################################################################


@dataclasses.dataclass
class TrainingLog:
    """Per-epoch metrics of a training run, one row per epoch."""

    metrics: Tuple[str, ...]
    rows: List[Dict[str, float]] = dataclasses.field(default_factory=list)

    def append(self, epoch: int, loss: float, **values: float) -> None:
        self.rows.append(dict(values, epoch=epoch, loss=loss))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["epoch", "loss", *self.metrics])

    def write_csv(self, path: Union[str, os.PathLike]) -> Path:
        self.to_frame().to_csv(path, index=False)
        return Path(path)

    @property
    def losses(self) -> List[float]:
        return [row["loss"] for row in self.rows]

    def last(self, metric: str) -> float:
        return self.rows[-1][metric]


def flow_display_domain(images: np.ndarray) -> np.ndarray:
    """Pass images through the counterfactual display path (box down, nearest up)."""
    _, h, w, _ = images.shape
    return nearest_upsample(box_downsample(images, FLOW_RESOLUTION), h, w)


def _fit(
    model: Network,
    raw_images: np.ndarray,
    targets: np.ndarray,
    hyper: ClassifierHyper,
    metric: Callable[[np.ndarray, np.ndarray], float],
    metric_name: str,
    transform: Callable[[np.ndarray], np.ndarray] = None,
) -> TrainingLog:
    n = len(raw_images)
    batches_per_epoch = math.ceil(n / hyper.batch_size)
    total_steps = hyper.epochs * batches_per_epoch
    optimizer = SGD(hyper.learning_rate, hyper.momentum, total_steps)
    rng = np.random.default_rng(hyper.seed + 1)
    log = TrainingLog((metric_name,))
    params = model.parameters()
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total, scores = 0.0, []
        for start in range(0, n, hyper.batch_size):
            index = np.sort(order[start : start + hyper.batch_size])
            images = raw_images[index].astype(np.float64) / 255.0
            if transform is not None:
                images = transform(images)
            value, grads = model.loss_and_gradients(images, targets[index])
            if not math.isfinite(value):
                raise TrainingError("Training loss is not finite", epoch)
            optimizer.step(params, grads)
            total += value * len(index)
            scores.append((metric(model.last_output, targets[index]), len(index)))
        mean_score = sum(s * k for s, k in scores) / n
        log.append(epoch, total / n, **{metric_name: mean_score})
        logger.info(
            "epoch %d: loss %.5f %s %.4f", epoch, total / n, metric_name, mean_score
        )
    return log


def classification_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Share of samples whose logit sign matches the label; a zero logit is Stretchy."""
    predicted = (np.asarray(logits).reshape(-1) >= 0).astype(int)
    return float(np.mean(predicted == np.asarray(labels).reshape(-1)))


def _probe_batch_mse(outputs: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((outputs - targets) ** 2))


def train_classifier(
    manifest: DatasetManifest, hyper: ClassifierHyper = None
) -> Tuple[ConvClassifier, TrainingLog]:
    """
    Train the convolutional Peeky/Stretchy classifier with binary cross entropy.

    :param manifest: Training split.
    :param hyper: Hyperparameters, defaults to ``ClassifierHyper()``
    :returns: The trained classifier and its per-epoch log (loss, accuracy).
    :raises ConfigurationError: If the manifest is empty.
    :raises TrainingError: If the loss diverges.
    """
    hyper = hyper or ClassifierHyper()
    if not len(manifest):
        raise ConfigurationError("Cannot train on an empty manifest.")
    images = manifest.image_array(raw=True)
    labels = manifest.labels().astype(np.float64)
    model = ConvClassifier(images.shape[1:], seed=hyper.seed)
    logger.info(
        "training classifier on %d images of %s, %d parameters",
        len(images),
        "x".join(map(str, images.shape[1:])),
        model.parameter_count,
    )
    log = _fit(model, images, labels, hyper, classification_accuracy, "accuracy")
    return model, log


def evaluate_classifier(model: ConvClassifier, manifest: DatasetManifest) -> float:
    """Accuracy of ``model`` on a split."""
    images = manifest.image_array()
    return classification_accuracy(model.predict_logits(images), manifest.labels())


def probe_mse(predicted: np.ndarray, actual: np.ndarray) -> Dict[str, float]:
    """
    Per-attribute mean squared error between two ``(N, 10)`` attribute matrices.

    The yaw error is the circular distance.
    """
    errors = {}
    for column, name in enumerate(ATTRIBUTES):
        if column == YAW_INDEX:
            diff = circular_difference(predicted[:, column], actual[:, column])
        else:
            diff = predicted[:, column] - actual[:, column]
        errors[name] = float(np.mean(diff**2))
    return errors


def train_probe(
    manifest: DatasetManifest,
    hyper: ProbeHyper = None,
    test_manifest: DatasetManifest = None,
) -> Tuple[AttributeProbe, TrainingLog, Dict[str, float]]:
    """
    Train the attribute probe on an unbiased split.

    :param manifest: Training split, generated with every bias disabled.
    :param hyper: Hyperparameters, defaults to ``ProbeHyper()``
    :param test_manifest: Held-out split; without one the last tenth of ``manifest`` \
    is held out.
    :returns: The probe, its training log and the per-attribute held-out MSE.
    """
    hyper = hyper or ProbeHyper()
    if not len(manifest):
        raise ConfigurationError("Cannot train on an empty manifest.")
    if manifest.sampler.bias_shape_strength or manifest.sampler.bias_color_strength:
        logger.warning("probe manifest %s was generated with biases", manifest.split)
    images = manifest.image_array(raw=True)
    values = manifest.attribute_matrix()
    if test_manifest is None:
        cut = max(1, len(images) - max(1, len(images) // 10))
        test_images = images[cut:].astype(np.float64) / 255.0
        test_values = values[cut:]
        images, values = images[:cut], values[:cut]
    else:
        test_images = test_manifest.image_array()
        test_values = test_manifest.attribute_matrix()
    transform = flow_display_domain if hyper.match_flow_resolution else None
    model = AttributeProbe(images.shape[1:], seed=hyper.seed)
    logger.info("training attribute probe on %d images", len(images))
    targets = encode_attributes(values)
    log = _fit(model, images, targets, hyper, _probe_batch_mse, "mse", transform)
    if transform is not None:
        test_images = transform(test_images)
    errors = probe_mse(model.predict(test_images), test_values)
    for name, value in errors.items():
        logger.info("probe %s held-out mse %.5f", name, value)
    return model, log, errors


def gradient_check(
    model: Network,
    sample: Tuple[np.ndarray, np.ndarray],
    tolerance: float,
    fraction: float = 0.01,
    step: float = 1e-3,
    seed: int = 0,
) -> float:
    """
    Compare analytic parameter gradients against central finite differences.

    The relative error of one coordinate is ``|a - n| / max(|a| + |n|, 1e-6)``.

    :param model: Network to check; its parameters are restored afterwards.
    :param sample: ``(images, targets)`` batch.
    :param tolerance: Errors above it are logged.
    :param fraction: Share of each parameter array that is checked, at least one entry.
    :param step: Finite difference step.
    :param seed: Seed of the coordinate subset.
    :returns: The maximum relative error.
    :raises ConfigurationError: If ``tolerance`` is not positive.
    """
    if not tolerance > 0:
        raise ConfigurationError(f"Tolerance must be positive. {tolerance} was given.")
    images, targets = sample
    _, analytic = model.loss_and_gradients(images, targets)
    analytic = [g.copy() for g in analytic]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for array, grad in zip(model.parameters(), analytic):
        flat, flat_grad = array.reshape(-1), grad.reshape(-1)
        count = max(1, int(round(fraction * flat.size)))
        for index in rng.choice(flat.size, size=count, replace=False):
            original = flat[index]
            flat[index] = original + step
            plus = float(model.loss(images, targets)[0])
            flat[index] = original - step
            minus = float(model.loss(images, targets)[0])
            flat[index] = original
            numeric = (plus - minus) / (2.0 * step)
            error = abs(flat_grad[index] - numeric) / max(
                abs(flat_grad[index]) + abs(numeric), 1e-6
            )
            if error > tolerance:
                logger.debug("gradient mismatch %.3g at index %d", error, index)
            worst = max(worst, float(error))
    return worst
