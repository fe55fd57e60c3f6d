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
Invertible network with a linear classifier head and counterfactual interpolation.

Images are box filtered to 16x16, flattened and shifted to ``[-0.5, 0.5]``. The
feature map ``phi`` is a stack of blocks (actnorm, fixed permutation, affine coupling)
and the prior map ``mu`` adds further blocks between the features and the standard
normal prior. The classifier logit is ``w . phi(x) + b``, so moving ``z`` along ``w``
changes the logit by exactly ``alpha * w . w``.
"""

# 1. Standard library imports:
import dataclasses
import json
import logging
import math
import operator
import os
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

# 2. Known third party imports:
import numpy as np

# 3. Local imports in the relative form:
from .dataset import DatasetManifest, box_downsample, nearest_upsample
from .errors import (
    ArgumentError,
    ChecksumError,
    ConfigurationError,
    DegenerateHeadError,
    NumericError,
    TrainingError,
)
from .nnet import (
    FLOW_RESOLUTION,
    SGD,
    Adam,
    ClassifierHyper,
    Dense,
    ReLU,
    TrainingLog,
    bce_with_logits,
    classification_accuracy,
    load_checkpoint,
    save_checkpoint,
    sigmoid,
)

logger = logging.getLogger(__name__)

FLOW_IMAGE_SHAPE = (FLOW_RESOLUTION, FLOW_RESOLUTION, 3)
PERCENTILE_GRID = np.arange(0.0, 100.5, 0.5)
DEFAULT_SPAN = (0.5, 99.5)
LOG_TWO_PI = math.log(2.0 * math.pi)


def _check_finite(array: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"Non-finite values in {where}.")
    return array


# Layers ###############################################################################


class ActNorm:
    """
    Per-dimension affine ``y = (x + bias) * exp(log_scale)``.

    :param dim: Number of dimensions.
    """

    def __init__(self, dim: int):
        self.params = {"bias": np.zeros(dim), "log_scale": np.zeros(dim)}
        self.grads: Dict[str, np.ndarray] = {}

    def initialize(self, x: np.ndarray) -> None:
        """Data-dependent init: zero mean and unit variance on ``x``."""
        self.params["bias"][...] = -x.mean(axis=0)
        self.params["log_scale"][...] = -np.log(x.std(axis=0) + 1e-6)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        log_scale = self.params["log_scale"]
        self._y = (x + self.params["bias"]) * np.exp(log_scale)
        return self._y, np.full(len(x), log_scale.sum())

    def backward(self, dy: np.ndarray, dlogdet: np.ndarray) -> np.ndarray:
        scale = np.exp(self.params["log_scale"])
        self.grads["bias"] = (dy * scale).sum(axis=0)
        self.grads["log_scale"] = (dy * self._y).sum(axis=0) + dlogdet.sum()
        return dy * scale

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y * np.exp(-self.params["log_scale"]) - self.params["bias"]


class Permutation:
    """
    Fixed random permutation of the dimensions; zero logdet.

    :param dim: Number of dimensions.
    :param rng: Generator drawing the permutation.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.order = rng.permutation(dim)
        self.inverse_order = np.argsort(self.order)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return x[:, self.order], np.zeros(len(x))

    def backward(self, dy: np.ndarray, dlogdet: np.ndarray) -> np.ndarray:
        return dy[:, self.inverse_order]

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y[:, self.inverse_order]


class AffineCoupling:
    """
    Affine coupling: the first half conditions a scale and shift of the second.

    ``y2 = x2 * exp(s) + t`` with ``s = tanh(raw)``; the subnet's last layer starts at
    zero so a fresh coupling is the identity.

    :param dim: Number of dimensions.
    :param hidden: Width of the two hidden subnet layers.
    :param rng: Generator drawing the subnet weights.
    """

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.split = dim // 2
        self.rest = dim - self.split
        self.net = [
            Dense(self.split, hidden, rng),
            ReLU(),
            Dense(hidden, hidden, rng),
            ReLU(),
            Dense(hidden, 2 * self.rest, rng),
        ]
        self.net[-1].params["W"][...] = 0.0

    @property
    def params(self) -> Dict[str, np.ndarray]:
        return {
            f"{i}.{k}": v
            for i, layer in enumerate(self.net)
            for k, v in layer.params.items()
        }

    @property
    def grads(self) -> Dict[str, np.ndarray]:
        return {
            f"{i}.{k}": v
            for i, layer in enumerate(self.net)
            for k, v in layer.grads.items()
        }

    def _subnet(self, x1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        out = x1
        for layer in self.net:
            out = layer.forward(out)
        return np.tanh(out[:, : self.rest]), out[:, self.rest :]

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x1, x2 = x[:, : self.split], x[:, self.split :]
        s, t = self._subnet(x1)
        self._x2, self._s, self._es = x2, s, np.exp(s)
        return np.concatenate([x1, x2 * self._es + t], axis=1), s.sum(axis=1)

    def backward(self, dy: np.ndarray, dlogdet: np.ndarray) -> np.ndarray:
        dy1, dy2 = dy[:, : self.split], dy[:, self.split :]
        dx2 = dy2 * self._es
        ds = dy2 * self._x2 * self._es + dlogdet[:, None]
        dout = np.concatenate([ds * (1.0 - self._s**2), dy2], axis=1)
        for layer in reversed(self.net):
            dout = layer.backward(dout)
        return np.concatenate([dy1 + dout, dx2], axis=1)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        y1, y2 = y[:, : self.split], y[:, self.split :]
        s, t = self._subnet(y1)
        return np.concatenate([y1, (y2 - t) * np.exp(-s)], axis=1)


class FlowStack:
    """
    Composition of blocks, each an actnorm, a permutation and a coupling.

    :param dim: Number of dimensions.
    :param blocks: Number of blocks.
    :param hidden: Subnet width.
    :param rng: Generator of permutations and weights.
    """

    def __init__(self, dim: int, blocks: int, hidden: int, rng: np.random.Generator):
        self.layers = []
        for _ in range(blocks):
            self.layers += [
                ActNorm(dim),
                Permutation(dim, rng),
                AffineCoupling(dim, hidden, rng),
            ]

    def initialize(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            if isinstance(layer, ActNorm):
                layer.initialize(x)
            x, _ = layer.forward(x)
        return x

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        logdet = np.zeros(len(x))
        for layer in self.layers:
            x, contribution = layer.forward(x)
            logdet += contribution
        return x, logdet

    def backward(self, dy: np.ndarray, dlogdet: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy, dlogdet)
        return dy

    def inverse(self, y: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            y = layer.inverse(y)
        return y

    def parameters(self) -> List[np.ndarray]:
        return [layer.params[k] for layer in self.layers for k in sorted(layer.params)]

    def gradients(self) -> List[np.ndarray]:
        return [layer.grads[k] for layer in self.layers for k in sorted(layer.params)]


# Model ################################################################################


class FlowLoss(NamedTuple):
    total: float
    sup: float
    unsup: float


class FlowModel:
    """
    Invertible feature map, prior map and linear head.

    :param dim: Input dimension ``d``.
    :param blocks: Blocks of the feature map, defaults to ``8``
    :param prior_blocks: Blocks of the prior map, defaults to ``4``
    :param hidden: Coupling subnet width, defaults to ``128``
    :param beta: Weight of the supervised loss (``>= 0``), defaults to ``10.0``
    :param seed: Seed of permutations and weights, defaults to ``0``
    :param image_shape: Shape the vectors reshape to, ``None`` for plain vectors.
    """

    architecture = "flow"

    def __init__(
        self,
        dim: int,
        blocks: int = 8,
        prior_blocks: int = 4,
        hidden: int = 128,
        beta: float = 10.0,
        seed: int = 0,
        image_shape: Optional[Tuple[int, int, int]] = None,
    ):
        if dim < 2:
            raise ConfigurationError(
                f"Flow dimension must be at least 2. {dim} was given."
            )
        if image_shape is not None and int(np.prod(image_shape)) != dim:
            raise ConfigurationError(
                f"Image shape {image_shape} does not hold {dim} values."
            )
        self.dim = dim
        self.blocks = blocks
        self.prior_blocks = prior_blocks
        self.hidden = hidden
        self.beta = beta
        self.seed = seed
        self.image_shape = tuple(image_shape) if image_shape is not None else None
        rng = np.random.default_rng(seed)
        self.phi = FlowStack(dim, blocks, hidden, rng)
        self.mu = FlowStack(dim, prior_blocks, hidden, rng)
        self.w = rng.normal(0.0, 1.0 / math.sqrt(dim), dim)
        self.b = np.zeros(1)
        self.percentiles: Optional[np.ndarray] = None
        self.grad_w = np.zeros(dim)
        self.grad_b = np.zeros(1)

    beta = property(operator.attrgetter("_beta"))

    @beta.setter
    def beta(self, b):
        if b is None:
            raise ValueError("Beta cannot be empty.")
        if not isinstance(b, (int, float)) or isinstance(b, bool):
            raise TypeError(f"Beta must be a number. {type(b)} was given.")
        if b < 0:
            raise ConfigurationError(f"Beta must be non-negative. {b} was given.")
        self._beta = float(b)

    def initialize(self, x: np.ndarray) -> None:
        """Data-dependent actnorm initialization of both maps on a batch."""
        self.mu.initialize(self.phi.initialize(x))

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = _check_finite(np.atleast_2d(np.asarray(x, dtype=np.float64)), "flow input")
        z, logdet = self.phi.forward(x)
        return _check_finite(z, "flow features"), logdet

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        z = _check_finite(z, "flow features")
        return _check_finite(self.phi.inverse(z), "flow inverse")

    def logits_from_features(self, z: np.ndarray) -> np.ndarray:
        return z @ self.w + self.b[0]

    def loss(self, x: np.ndarray, y_true: np.ndarray) -> FlowLoss:
        """
        Mean loss of a batch; caches what ``backward`` needs.

        ``unsup`` is the negative log likelihood ``0.5 |u|^2 + d/2 log(2 pi) - logdet``
        of ``u = mu(phi(x))``, ``sup`` the binary cross entropy of the head.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
        if np.any((y_true != 0) & (y_true != 1)):
            raise ArgumentError("Flow labels must be 0 or 1.")
        z, logdet_phi = self.forward(x)
        u, logdet_mu = self.mu.forward(z)
        _check_finite(u, "flow prior output")
        logits = self.logits_from_features(z)
        sup, _ = bce_with_logits(logits, y_true)
        log_prior = -0.5 * np.sum(u**2, axis=1) - 0.5 * self.dim * LOG_TWO_PI
        nll = -(log_prior + logdet_phi + logdet_mu)
        unsup = float(nll.mean())
        self._cache = (x, z, u, logits, y_true)
        return FlowLoss(unsup + self._beta * sup, sup, unsup)

    def backward(self) -> List[np.ndarray]:
        x, z, u, logits, y_true = self._cache
        n = len(x)
        dlogdet = np.full(n, -1.0 / n)
        dz = self.mu.backward(u / n, dlogdet)
        dlogit = self._beta * (sigmoid(logits) - y_true) / n
        self.grad_w = z.T @ dlogit
        self.grad_b = np.array([dlogit.sum()])
        dz = dz + dlogit[:, None] * self.w
        self.phi.backward(dz, dlogdet)
        return self.gradients()

    def loss_and_gradients(
        self, x: np.ndarray, y_true: np.ndarray
    ) -> Tuple[float, List[np.ndarray]]:
        value = self.loss(x, y_true)
        return value.total, self.backward()

    def parameters(self) -> List[np.ndarray]:
        return self.phi.parameters() + self.mu.parameters() + [self.w, self.b]

    def gradients(self) -> List[np.ndarray]:
        return self.phi.gradients() + self.mu.gradients() + [self.grad_w, self.grad_b]

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # Image domain ---------------------------------------------------------------------

    def encode(self, images: np.ndarray) -> np.ndarray:
        """
        Map ``(N, H, W, 3)`` images in ``[0, 1]`` to flow input vectors.

        Images larger than the flow resolution are box filtered down first.
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        if self.image_shape is None:
            raise ConfigurationError("This flow model has no image shape.")
        if images.shape[1:] != self.image_shape:
            images = box_downsample(images, self.image_shape[0])
        return images.reshape(len(images), -1) - 0.5

    def decode(self, vectors: np.ndarray) -> np.ndarray:
        """Map flow input vectors back to images clipped to ``[0, 1]``."""
        vectors = np.atleast_2d(vectors)
        return np.clip(vectors + 0.5, 0.0, 1.0).reshape(len(vectors), *self.image_shape)

    def features(self, images: np.ndarray) -> np.ndarray:
        """Feature vectors ``z = phi(x)`` of images."""
        return self.forward(self.encode(images))[0]

    def predict_logits(self, images: np.ndarray) -> np.ndarray:
        """Head logits of images; positive means Stretchy."""
        return self.logits_from_features(self.features(images))

    def logit_percentile(self, q: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """
        Validation logit at percentile ``q`` (``0-100``), interpolated on the record.

        :raises ConfigurationError: If no percentiles were recorded.
        """
        if self.percentiles is None:
            raise ConfigurationError("The flow model has no recorded percentiles.")
        return np.interp(q, PERCENTILE_GRID, self.percentiles)

    def record_percentiles(self, logits: np.ndarray) -> None:
        logits = np.asarray(logits, dtype=np.float64)
        self.percentiles = np.percentile(logits, PERCENTILE_GRID)

    # Checkpoints ----------------------------------------------------------------------

    def descriptor(self) -> Dict[str, Any]:
        return {
            "architecture": self.architecture,
            "dim": self.dim,
            "blocks": self.blocks,
            "prior_blocks": self.prior_blocks,
            "hidden": self.hidden,
            "beta": self._beta,
            "seed": self.seed,
            "image_shape": list(self.image_shape) if self.image_shape else None,
            "percentiles": (
                None if self.percentiles is None else self.percentiles.tolist()
            ),
        }

    def save(self, path: Union[str, os.PathLike]) -> Path:
        return save_checkpoint(path, self.descriptor(), self.parameters())

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "FlowModel":
        descriptor, arrays = load_checkpoint(path)
        if descriptor.get("architecture") != cls.architecture:
            raise ChecksumError(
                f"{path} holds a {descriptor.get('architecture')} checkpoint, not flow."
            )
        model = cls(
            descriptor["dim"],
            blocks=descriptor["blocks"],
            prior_blocks=descriptor["prior_blocks"],
            hidden=descriptor["hidden"],
            beta=descriptor["beta"],
            seed=descriptor["seed"],
            image_shape=descriptor["image_shape"],
        )
        for target, value in zip(model.parameters(), arrays):
            target[...] = value
        if descriptor.get("percentiles") is not None:
            model.percentiles = np.asarray(descriptor["percentiles"])
        return model


def flow_forward(model: FlowModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Features and log determinant of the feature map.

    :param model: The flow.
    :param x: Vector or batch of vectors of length ``d``.
    :returns: ``z = phi(x)`` and ``log |det dphi/dx|`` per sample.
    :raises NumericError: On non-finite activations.
    """
    return model.forward(x)


def flow_inverse(model: FlowModel, z: np.ndarray) -> np.ndarray:
    """Invert the feature map; raises ``NumericError`` on non-finite values."""
    return model.inverse(z)


def flow_loss(model: FlowModel, x: np.ndarray, y_true: np.ndarray) -> FlowLoss:
    """``(total, sup, unsup)`` of a batch with ``total = unsup + beta * sup``."""
    return model.loss(x, y_true)


def sample_prior(model: FlowModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw images from the model through ``phi^-1(mu^-1(eps))``, ``eps ~ N(0, I)``.

    :returns: ``(n, 16, 16, 3)`` images in ``[0, 1]``, or ``(n, d)`` vectors for a \
    model without image shape.
    """
    eps = rng.standard_normal((n, model.dim))
    x = model.inverse(_check_finite(model.mu.inverse(eps), "prior sample"))
    return model.decode(x) if model.image_shape else x


# Training #############################################################################


class FlowHyper(ClassifierHyper):
    """
    Hyperparameters of the flow.

    Takes every ``ClassifierHyper`` parameter, with a learning rate default of
    ``0.001``, and additionally:

    :param beta: Supervised loss weight, defaults to ``10.0``
    :param blocks: Feature map blocks, defaults to ``8``
    :param prior_blocks: Prior map blocks, defaults to ``4``
    :param hidden: Coupling subnet width, defaults to ``128``
    :param optimizer: ``"adam"`` or ``"sgd"``, defaults to ``"adam"``
    """

    table_name = "flow"

    def __init__(
        self,
        beta: float = None,
        blocks: int = None,
        prior_blocks: int = None,
        hidden: int = None,
        optimizer: str = None,
        **kwargs,
    ):
        kwargs.setdefault("learning_rate", 0.001)
        super().__init__(**kwargs)
        self.beta = 10.0 if beta is None else beta
        self.blocks = 8 if blocks is None else blocks
        self.prior_blocks = 4 if prior_blocks is None else prior_blocks
        self.hidden = 128 if hidden is None else hidden
        self.optimizer = "adam" if optimizer is None else optimizer

    beta = property(operator.attrgetter("_beta"))

    @beta.setter
    def beta(self, b):
        if not isinstance(b, (int, float)) or isinstance(b, bool):
            raise TypeError(f"Beta must be a number. {type(b)} was given.")
        if b < 0:
            raise ConfigurationError(f"Beta must be non-negative. {b} was given.")
        self._beta = float(b)

    def _count(self, name: str, value, minimum: int) -> int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise TypeError(f"{name} must be an integer. {type(value)} was given.")
        if value < minimum:
            raise ConfigurationError(
                f"{name} must be at least {minimum}. {value} was given."
            )
        return value

    blocks = property(operator.attrgetter("_blocks"))

    @blocks.setter
    def blocks(self, b):
        self._blocks = self._count("Blocks", b, 1)

    prior_blocks = property(operator.attrgetter("_prior_blocks"))

    @prior_blocks.setter
    def prior_blocks(self, b):
        self._prior_blocks = self._count("Prior blocks", b, 0)

    hidden = property(operator.attrgetter("_hidden"))

    @hidden.setter
    def hidden(self, h):
        self._hidden = self._count("Hidden width", h, 1)

    optimizer = property(operator.attrgetter("_optimizer"))

    @optimizer.setter
    def optimizer(self, o):
        if not isinstance(o, str):
            raise TypeError(f"Optimizer must be a string. {type(o)} was given.")
        if o not in ("adam", "sgd"):
            raise ConfigurationError(
                f'Optimizer must be "adam" or "sgd". "{o}" was given.'
            )
        self._optimizer = o

    def to_dict(self) -> Dict[str, Any]:
        return dict(
            super().to_dict(),
            beta=self._beta,
            blocks=self._blocks,
            prior_blocks=self._prior_blocks,
            hidden=self._hidden,
            optimizer=self._optimizer,
        )

    def build_model(self, dim: int, image_shape=None) -> FlowModel:
        return FlowModel(
            dim,
            blocks=self._blocks,
            prior_blocks=self._prior_blocks,
            hidden=self._hidden,
            beta=self._beta,
            seed=self.seed,
            image_shape=image_shape,
        )


def fit_flow(
    model: FlowModel,
    x: np.ndarray,
    labels: np.ndarray,
    hyper: FlowHyper,
    dequantize: bool = True,
) -> TrainingLog:
    """
    Minimize the flow loss on vectors ``x``.

    :param model: Flow to train in place; actnorm is initialized on the first batch.
    :param x: ``(N, d)`` flow input vectors.
    :param labels: ``(N,)`` labels in ``{0, 1}``.
    :param hyper: Hyperparameters.
    :param dequantize: Add ``Uniform(0, 1/255)`` noise to every batch, defaults to \
    ``True``
    :returns: Per-epoch log of loss, sup, unsup and head accuracy.
    :raises TrainingError: If the loss diverges.
    """
    n = len(x)
    labels = np.asarray(labels, dtype=np.float64)
    rng = np.random.default_rng(hyper.seed + 1)
    if hyper.optimizer == "adam":
        optimizer = Adam(hyper.learning_rate)
    else:
        steps = hyper.epochs * math.ceil(n / hyper.batch_size)
        optimizer = SGD(hyper.learning_rate, hyper.momentum, steps)
    log = TrainingLog(("sup", "unsup", "accuracy"))
    params = model.parameters()
    initialized = False
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, hyper.batch_size):
            index = np.sort(order[start : start + hyper.batch_size])
            batch = x[index]
            if dequantize:
                batch = batch + rng.uniform(0.0, 1.0 / 255.0, batch.shape)
            if not initialized:
                model.initialize(batch)
                initialized = True
            try:
                value = model.loss(batch, labels[index])
            except ArithmeticError as e:
                raise TrainingError(f"Flow activations diverged: {e}", epoch) from e
            if not math.isfinite(value.total):
                raise TrainingError("Flow loss is not finite", epoch)
            grads = model.backward()
            optimizer.step(params, grads)
            accuracy = classification_accuracy(model._cache[3], labels[index])
            metrics = [value.total, value.sup, value.unsup, accuracy]
            sums += len(index) * np.array(metrics)
        total, sup, unsup, accuracy = sums / n
        log.append(epoch, total, sup=sup, unsup=unsup, accuracy=accuracy)
        logger.info(
            "epoch %d: loss %.4f sup %.4f unsup %.4f accuracy %.4f",
            epoch,
            total,
            sup,
            unsup,
            accuracy,
        )
    return log


def train_flow(
    manifest: DatasetManifest,
    hyper: FlowHyper = None,
    validation: DatasetManifest = None,
) -> Tuple[FlowModel, TrainingLog]:
    """
    Train a flow on a split and record the validation logit percentiles.

    :param manifest: Training split.
    :param hyper: Hyperparameters, defaults to ``FlowHyper()``
    :param validation: Split whose logits define the trajectory spans, defaults to \
    the training split.
    :returns: The trained model and its training log.
    """
    hyper = hyper or FlowHyper()
    if not len(manifest):
        raise ConfigurationError("Cannot train on an empty manifest.")
    model = hyper.build_model(int(np.prod(FLOW_IMAGE_SHAPE)), FLOW_IMAGE_SHAPE)
    x = model.encode(manifest.image_array())
    logger.info(
        "training flow on %d images, %d parameters", len(x), model.parameter_count
    )
    log = fit_flow(model, x, manifest.labels(), hyper)
    reference = validation if validation is not None else manifest
    model.record_percentiles(model.predict_logits(reference.image_array()))
    logger.info(
        "validation logit span %.3f to %.3f",
        model.logit_percentile(DEFAULT_SPAN[0]),
        model.logit_percentile(DEFAULT_SPAN[1]),
    )
    return model, log


# Counterfactuals ######################################################################


@dataclasses.dataclass
class TrajectoryStep:
    """One interpolation step ``z~ = z + alpha * w``."""

    alpha: float
    target_logit: float
    logit: float
    vector: np.ndarray
    reencoded_logit: float
    decode_error: float

    def to_dict(self, image: str = None) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "target_logit": self.target_logit,
            "logit": self.logit,
            "reencoded_logit": self.reencoded_logit,
            "decode_error": self.decode_error,
            "image": image,
        }


@dataclasses.dataclass
class CounterfactualTrajectory:
    """A source sample and its interpolation steps in increasing logit order."""

    source: np.ndarray
    source_logit: float
    steps: List[TrajectoryStep]
    span: Tuple[float, float]
    image_shape: Optional[Tuple[int, int, int]] = None
    sample_id: str = ""

    @property
    def logits(self) -> np.ndarray:
        return np.array([step.logit for step in self.steps])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([step.alpha for step in self.steps])

    @property
    def max_decode_error(self) -> float:
        return max(step.decode_error for step in self.steps)

    def images(self, height: int = None, width: int = None) -> np.ndarray:
        """
        Step images, nearest upsampled to ``height x width`` when given.

        :raises ConfigurationError: For a trajectory of plain vectors.
        """
        if self.image_shape is None:
            raise ConfigurationError("Trajectory holds vectors, not images.")
        vectors = np.stack([step.vector for step in self.steps])
        images = np.clip(vectors + 0.5, 0.0, 1.0)
        images = images.reshape(len(vectors), *self.image_shape)
        if height is None:
            return images
        return nearest_upsample(images, height, width)

    def to_jsonl(self, image_paths: Sequence[str] = None) -> str:
        """One JSON line per step with its logits, decode error and image path."""
        paths = [None] * len(self.steps) if image_paths is None else list(image_paths)
        return "".join(
            json.dumps(dict(step.to_dict(path), sample_id=self.sample_id)) + "\n"
            for step, path in zip(self.steps, paths)
        )


def make_counterfactual(
    model: FlowModel,
    x: np.ndarray,
    span_percentiles: Tuple[float, float] = DEFAULT_SPAN,
    steps: int = 11,
    targets: Sequence[float] = None,
    sample_id: str = "",
) -> CounterfactualTrajectory:
    """
    Interpolate a sample along the head weight in feature space.

    Step ``i`` targets the ``i``-th of ``steps`` evenly spaced logits between the two
    span percentiles of the recorded validation logits, or ``targets`` when given; its
    step size is ``alpha = (target - y0) / w . w``.

    :param model: Trained flow with recorded percentiles.
    :param x: Flow input vector, or an image when the model has an image shape.
    :param span_percentiles: Percentiles bounding the targets,
        defaults to ``(0.5, 99.5)``
    :param steps: Number of steps (``>= 2``), defaults to ``11``
    :param targets: Explicit target logits; overrides span and step count.
    :param sample_id: Identifier stored with the trajectory.
    :raises DegenerateHeadError: If ``w . w`` is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 or (x.ndim == 4 and model.image_shape is not None):
        x = model.encode(x)
    x = x.reshape(1, -1)
    wtw = float(model.w @ model.w)
    if wtw == 0.0:
        raise DegenerateHeadError("The head weight vector is zero; w.w = 0.")
    if targets is None:
        if steps < 2:
            raise ArgumentError(
                f"A trajectory needs at least 2 steps. {steps} was given."
            )
        low, high = model.logit_percentile(list(span_percentiles))
        targets = np.linspace(low, high, steps)
    targets = np.asarray(targets, dtype=np.float64)
    z = model.forward(x)[0][0]
    y0 = float(model.logits_from_features(z))
    alphas = (targets - y0) / wtw
    shifted = z[None, :] + alphas[:, None] * model.w[None, :]
    logits = model.logits_from_features(shifted)
    decoded = model.inverse(shifted)
    display = np.round(np.clip(decoded + 0.5, 0.0, 1.0) * 255.0) / 255.0 - 0.5
    reencoded = model.logits_from_features(model.forward(display)[0])
    errors = np.abs(display - decoded).max(axis=1)
    trajectory_steps = [
        TrajectoryStep(
            alpha=float(alphas[i]),
            target_logit=float(targets[i]),
            logit=float(logits[i]),
            vector=decoded[i],
            reencoded_logit=float(reencoded[i]),
            decode_error=float(errors[i]),
        )
        for i in range(len(targets))
    ]
    return CounterfactualTrajectory(
        source=x[0],
        source_logit=y0,
        steps=trajectory_steps,
        span=tuple(span_percentiles),
        image_shape=model.image_shape,
        sample_id=sample_id,
    )
