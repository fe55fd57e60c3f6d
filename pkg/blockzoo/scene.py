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
Generative parameter space of the block animals and its biased samplers.

A sample is drawn class first: the animal class is a fair coin, the legs' position
is uniform on the class interval, and the two biased attributes (blocks' shape and
animal color) are drawn from mixtures conditioned on the legs' position. Every other
attribute follows its own, by default class independent, distribution.
"""

# 1. Standard library imports:
import dataclasses
import enum
import hashlib
import json
import logging
import math
import operator
from typing import Any, Dict, List, Optional, Tuple

# 2. Known third party imports:
import numpy as np

# 3. Local imports in the relative form:
from .config import dumps_toml, loads_toml, reject_unknown
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

ATTRIBUTES = (
    "legs_position",
    "color",
    "shape",
    "background",
    "rotation_yaw",
    "rotation_roll",
    "rotation_pitch",
    "bending",
    "position_x",
    "position_y",
)

ATTRIBUTE_RANGES = {
    "legs_position": (0.0, 1.0),
    "color": (0.0, 1.0),
    "shape": (0.0, 1.0),
    "background": (0.05, 0.95),
    "rotation_yaw": (0.0, TWO_PI),
    "rotation_roll": (-math.pi / 4, math.pi / 4),
    "rotation_pitch": (-math.pi / 6, math.pi / 6),
    "bending": (-math.pi / 10, math.pi / 10),
    "position_x": (-0.8, 0.0),
    "position_y": (-0.8, 0.0),
}

# Attributes whose distribution is a plain entry of ``SamplerConfig.attributes``.
GENERIC_ATTRIBUTES = ATTRIBUTES[3:]

REJECTION_CAP = 1000


class AnimalClass(str, enum.Enum):
    """The two block animals. Stretchy is the positive class."""

    PEEKY = "peeky"
    STRETCHY = "stretchy"

    @property
    def label(self) -> int:
        """Binary label, ``1`` for Stretchy."""
        return int(self is AnimalClass.STRETCHY)


# Distributions ########################################################################


@dataclasses.dataclass(frozen=True)
class Uniform:
    """Uniform distribution on ``[low, high]``."""

    low: float
    high: float

    def __post_init__(self):
        if not self.low <= self.high:
            raise ConfigurationError(
                f"Uniform bounds must be ordered. [{self.low}, {self.high}] was given."
            )

    @property
    def support(self) -> Tuple[float, float]:
        return self.low, self.high

    def sample(
        self, rng: np.random.Generator, animal: Optional[AnimalClass] = None
    ) -> float:
        return float(self.low + (self.high - self.low) * rng.random())

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclasses.dataclass(frozen=True)
class TruncatedNormal:
    """
    Normal distribution restricted to ``[low, high]``.

    Draws are exact: candidates outside the interval are rejected, at most
    ``REJECTION_CAP`` times per draw.
    """

    mean: float
    std: float
    low: float
    high: float

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigurationError(
                f"Truncated normal std must be positive. {self.std} was given."
            )
        if not self.low < self.high:
            raise ConfigurationError(
                "Truncated normal bounds must be ordered."
                f" [{self.low}, {self.high}] was given."
            )

    @property
    def support(self) -> Tuple[float, float]:
        return self.low, self.high

    def sample(
        self, rng: np.random.Generator, animal: Optional[AnimalClass] = None
    ) -> float:
        for _ in range(REJECTION_CAP):
            value = rng.normal(self.mean, self.std)
            if self.low <= value <= self.high:
                return float(value)
        raise ConfigurationError(
            f"Truncated normal N({self.mean}, {self.std}) on [{self.low}, {self.high}]"
            f" rejected {REJECTION_CAP} candidates in a row."
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "truncated_normal",
            "mean": self.mean,
            "std": self.std,
            "low": self.low,
            "high": self.high,
        }


@dataclasses.dataclass(frozen=True)
class ClassConditional:
    """
    One distribution per animal class.

    Without a class (interventions), a fair coin picks the branch, which makes the
    unconditional distribution the equal mixture of both branches.
    """

    peeky: Any
    stretchy: Any

    @property
    def support(self) -> Tuple[float, float]:
        lows, highs = zip(self.peeky.support, self.stretchy.support)
        return min(lows), max(highs)

    def sample(
        self, rng: np.random.Generator, animal: Optional[AnimalClass] = None
    ) -> float:
        if animal is None:
            animal = AnimalClass.PEEKY if rng.random() < 0.5 else AnimalClass.STRETCHY
        branch = self.peeky if animal is AnimalClass.PEEKY else self.stretchy
        return branch.sample(rng, animal)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "class_conditional",
            "peeky": self.peeky.to_dict(),
            "stretchy": self.stretchy.to_dict(),
        }


def distribution_from_dict(spec: Dict[str, Any]):
    """
    Build a distribution from its dictionary form.

    :param spec: Mapping with a ``kind`` of ``"uniform"``, ``"truncated_normal"`` or \
    ``"class_conditional"`` and that kind's fields.
    :returns: The distribution.
    :raises ConfigurationError: On unknown kinds or fields.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigurationError(f"Distribution needs a kind. {spec!r} was given.")
    fields = {k: v for k, v in spec.items() if k != "kind"}
    kind = spec["kind"]
    if kind == "uniform":
        reject_unknown(fields, ("low", "high"), "uniform distribution")
        return Uniform(float(fields["low"]), float(fields["high"]))
    if kind == "truncated_normal":
        reject_unknown(fields, ("mean", "std", "low", "high"), "truncated normal")
        return TruncatedNormal(
            float(fields["mean"]),
            float(fields["std"]),
            float(fields["low"]),
            float(fields["high"]),
        )
    if kind == "class_conditional":
        reject_unknown(fields, ("peeky", "stretchy"), "class conditional")
        return ClassConditional(
            distribution_from_dict(fields["peeky"]),
            distribution_from_dict(fields["stretchy"]),
        )
    raise ConfigurationError(f'Unknown distribution kind "{kind}".')


def default_attribute_distributions() -> Dict[str, Any]:
    """Distributions of the class independent attributes of the study dataset."""
    return {
        "background": Uniform(0.05, 0.95),
        "rotation_yaw": Uniform(0.0, TWO_PI),
        "rotation_roll": TruncatedNormal(
            0.0, 0.03 * math.pi / 4, -math.pi / 4, math.pi / 4
        ),
        "rotation_pitch": TruncatedNormal(
            0.0, math.pi / 8, -math.pi / 6, math.pi / 6
        ),
        "bending": TruncatedNormal(0.0, math.pi / 20, -math.pi / 10, math.pi / 10),
        "position_x": Uniform(-0.8, 0.0),
        "position_y": Uniform(-0.8, 0.0),
    }


# Configuration ########################################################################


def _check_interval(name: str, value) -> Tuple[float, float]:
    if value is None:
        raise ValueError(f"{name} cannot be empty.")
    if not isinstance(value, (tuple, list)) or len(value) != 2:
        raise TypeError(f"{name} must be a pair of numbers. {type(value)} was given.")
    low, high = (float(v) for v in value)
    if not 0.0 <= low < high <= 1.0:
        raise ConfigurationError(
            f"{name} must satisfy 0 <= low < high <= 1. [{low}, {high}] was given."
        )
    return low, high


def _check_fraction(name: str, value) -> float:
    if value is None:
        raise ValueError(f"{name} cannot be empty.")
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise TypeError(f"{name} must be a number. {type(value)} was given.")
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{name} must be within 0 to 1. {value} was given.")
    return float(value)


class SamplerConfig:
    """
    Class conditional distributions and bias strengths of the scene sampler.

    :param bias_shape_strength: Weight of the triangular shape densities outside the \
    neutral band (``0-1``), defaults to ``1.0``
    :param bias_color_strength: Peak weight of the triangular color densities at the \
    center of the overlap (``0-1``), defaults to ``1.0``
    :param overlap: Legs' positions shared by both classes, defaults to \
    ``(0.48, 0.52)``
    :param neutral_band: Legs' positions with uniformly distributed shape, defaults \
    to ``(0.45, 0.55)``
    :param color_kernel_half_width: Distance from the overlap center at which the \
    color bias fades out, defaults to ``0.15``
    :param attributes: Distributions of the remaining attributes keyed by attribute \
    name. Missing entries use the study dataset's distributions.
    """

    def __init__(
        self,
        bias_shape_strength: float = None,
        bias_color_strength: float = None,
        overlap: Tuple[float, float] = None,
        neutral_band: Tuple[float, float] = None,
        color_kernel_half_width: float = None,
        attributes: Dict[str, Any] = None,
    ):
        if bias_shape_strength is None:
            bias_shape_strength = 1.0
        self.bias_shape_strength = bias_shape_strength
        if bias_color_strength is None:
            bias_color_strength = 1.0
        self.bias_color_strength = bias_color_strength
        if overlap is None:
            overlap = (0.48, 0.52)
        self.overlap = overlap
        if neutral_band is None:
            neutral_band = (0.45, 0.55)
        self.neutral_band = neutral_band
        if color_kernel_half_width is None:
            color_kernel_half_width = 0.15
        self.color_kernel_half_width = color_kernel_half_width
        merged = default_attribute_distributions()
        merged.update(attributes or {})
        self.attributes = merged
        self.validate()

    bias_shape_strength = property(operator.attrgetter("_bias_shape_strength"))

    @bias_shape_strength.setter
    def bias_shape_strength(self, s):
        self._bias_shape_strength = _check_fraction("Shape bias strength", s)

    bias_color_strength = property(operator.attrgetter("_bias_color_strength"))

    @bias_color_strength.setter
    def bias_color_strength(self, s):
        self._bias_color_strength = _check_fraction("Color bias strength", s)

    overlap = property(operator.attrgetter("_overlap"))

    @overlap.setter
    def overlap(self, o):
        self._overlap = _check_interval("Overlap", o)

    neutral_band = property(operator.attrgetter("_neutral_band"))

    @neutral_band.setter
    def neutral_band(self, b):
        self._neutral_band = _check_interval("Neutral band", b)

    color_kernel_half_width = property(operator.attrgetter("_color_kernel_half_width"))

    @color_kernel_half_width.setter
    def color_kernel_half_width(self, w):
        if w is None:
            raise ValueError("Color kernel half-width cannot be empty.")
        if not isinstance(w, (int, float)) or isinstance(w, bool):
            raise TypeError(
                f"Color kernel half-width must be a number. {type(w)} was given."
            )
        if not 0.0 < w <= 0.5:
            raise ConfigurationError(
                f"Color kernel half-width must be within (0, 0.5]. {w} was given."
            )
        self._color_kernel_half_width = float(w)

    attributes = property(operator.attrgetter("_attributes"))

    @attributes.setter
    def attributes(self, a):
        if a is None:
            raise ValueError("Attribute distributions cannot be empty.")
        if not isinstance(a, dict):
            raise TypeError(
                f"Attribute distributions must be a dict. {type(a)} was given."
            )
        reject_unknown(a, GENERIC_ATTRIBUTES, "attribute distributions")
        a = {
            name: distribution_from_dict(d) if isinstance(d, dict) else d
            for name, d in a.items()
        }
        for name, dist in a.items():
            low, high = ATTRIBUTE_RANGES[name]
            d_low, d_high = dist.support
            if d_low < low - 1e-12 or d_high > high + 1e-12:
                raise ConfigurationError(
                    f"Distribution of {name} on [{d_low}, {d_high}] leaves the"
                    f" attribute range [{low}, {high}]."
                )
        self._attributes = dict(a)

    @property
    def overlap_center(self) -> float:
        return 0.5 * (self._overlap[0] + self._overlap[1])

    def validate(self) -> None:
        """
        Check the relations between fields.

        :raises ConfigurationError: Unless overlap ⊂ neutral band ⊂ [0, 1].
        """
        (o_low, o_high), (b_low, b_high) = self._overlap, self._neutral_band
        if not (b_low <= o_low and o_high <= b_high):
            raise ConfigurationError(
                f"Overlap [{o_low}, {o_high}] must lie inside the neutral band"
                f" [{b_low}, {b_high}]."
            )

    @classmethod
    def unbiased(cls, **kwargs) -> "SamplerConfig":
        """Config with both bias strengths set to zero."""
        return cls(bias_shape_strength=0.0, bias_color_strength=0.0, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bias_shape_strength": self._bias_shape_strength,
            "bias_color_strength": self._bias_color_strength,
            "overlap": list(self._overlap),
            "neutral_band": list(self._neutral_band),
            "color_kernel_half_width": self._color_kernel_half_width,
            "attributes": {
                name: self._attributes[name].to_dict() for name in GENERIC_ATTRIBUTES
            },
        }

    @classmethod
    def from_dict(cls, table: Dict[str, Any]) -> "SamplerConfig":
        """
        Build a config from its dictionary form (the ``[sampler]`` TOML table).

        :raises ConfigurationError: On unknown keys or invalid values.
        """
        reject_unknown(
            table,
            (
                "bias_shape_strength",
                "bias_color_strength",
                "overlap",
                "neutral_band",
                "color_kernel_half_width",
                "attributes",
            ),
            "[sampler]",
        )
        kwargs = dict(table)
        if "attributes" in kwargs:
            kwargs["attributes"] = {
                name: distribution_from_dict(spec)
                for name, spec in kwargs["attributes"].items()
            }
        return cls(**kwargs)

    def to_toml(self) -> str:
        """Serialize as a TOML document with a single ``[sampler]`` table."""
        return dumps_toml({"sampler": self.to_dict()})

    @classmethod
    def from_toml(cls, text: str) -> "SamplerConfig":
        """Parse a TOML document holding a ``[sampler]`` table."""
        document = loads_toml(text)
        return cls.from_dict(document.get("sampler", {}))

    def __eq__(self, other):
        return isinstance(other, SamplerConfig) and self.to_dict() == other.to_dict()


# Scene parameters #####################################################################


@dataclasses.dataclass(frozen=True)
class SceneParameters:
    """Full generative state of one rendered sample."""

    class_label: AnimalClass
    legs_position: float
    color: float
    shape: float
    background: float
    rotation_yaw: float
    rotation_roll: float
    rotation_pitch: float
    bending: float
    position_x: float
    position_y: float
    sample_id: str = ""
    seed: int = 0
    metadata: Dict[str, Any] = dataclasses.field(default_factory=dict, compare=False)

    @property
    def label(self) -> int:
        return self.class_label.label

    def attribute(self, name: str) -> float:
        if name not in ATTRIBUTES:
            raise ConfigurationError(f'Unknown attribute "{name}".')
        return getattr(self, name)

    def attribute_vector(self) -> np.ndarray:
        """Values of the ten generative attributes in ``ATTRIBUTES`` order."""
        return np.array([getattr(self, name) for name in ATTRIBUTES], dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        record = dataclasses.asdict(self)
        record["class_label"] = self.class_label.value
        return record

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "SceneParameters":
        fields = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in record.items() if k in fields}
        kwargs["class_label"] = AnimalClass(kwargs["class_label"])
        kwargs["metadata"] = dict(kwargs.get("metadata") or {})
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SceneParameters":
        return cls.from_dict(json.loads(line))


@dataclasses.dataclass
class ValidityReport:
    """Outcome of ``validate_scene``."""

    range_violations: List[str] = dataclasses.field(default_factory=list)
    class_violation: Optional[str] = None

    @property
    def valid(self) -> bool:
        return not self.range_violations and self.class_violation is None

    @property
    def issues(self) -> List[str]:
        issues = list(self.range_violations)
        if self.class_violation:
            issues.append(self.class_violation)
        return issues


# Operations ###########################################################################


def sample_stream(seed: int, sample_id: str) -> np.random.Generator:
    """
    Random stream owned by one sample.

    The stream depends only on the global seed and the sample id, so samples can be
    generated in any order and on any number of workers.

    :param seed: Global seed of the run.
    :param sample_id: Unique id of the sample.
    :returns: A fresh generator.
    """
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _triangular(rng_value: float, toward_one: bool) -> float:
    """Inverse CDF draw from ``f(s)=2s`` (``toward_one``) or ``f(s)=2(1-s)``."""
    root = math.sqrt(rng_value)
    return root if toward_one else 1.0 - root


def sample_shape(config: SamplerConfig, legs: float, rng: np.random.Generator) -> float:
    """
    Draw the blocks' shape for a legs' position.

    Inside the neutral band the shape is uniform. Outside, a triangular density
    leaning to cubes (Peeky side) or spheres (Stretchy side) is mixed with the
    uniform density by ``bias_shape_strength``.
    """
    pick, value = rng.random(), rng.random()
    band_low, band_high = config.neutral_band
    if band_low <= legs <= band_high or pick >= config.bias_shape_strength:
        return float(value)
    return _triangular(value, toward_one=legs > band_high)


def color_bias_weight(config: SamplerConfig, legs: float) -> float:
    """Mixture weight of the class informative color density at ``legs``."""
    distance = abs(legs - config.overlap_center)
    return config.bias_color_strength * max(
        0.0, 1.0 - distance / config.color_kernel_half_width
    )


def sample_color(
    config: SamplerConfig,
    animal: AnimalClass,
    legs: float,
    rng: np.random.Generator,
) -> float:
    """
    Draw the animal color given class and legs' position.

    Near the overlap center, Stretchies lean red (``0``) and Peekies lean blue
    (``1``); the lean fades linearly to a uniform color at the kernel half-width.
    """
    pick, value = rng.random(), rng.random()
    if pick >= color_bias_weight(config, legs):
        return float(value)
    return _triangular(value, toward_one=animal is AnimalClass.PEEKY)


def sample_scene(
    config: SamplerConfig,
    rng: np.random.Generator,
    sample_id: str = "",
    seed: int = 0,
) -> SceneParameters:
    """
    Sample one scene.

    :param config: Sampler configuration.
    :param rng: Random stream of this sample, see ``sample_stream``.
    :param sample_id: Id recorded on the parameters.
    :param seed: Seed recorded on the parameters.
    :returns: The sampled parameters.
    :raises ConfigurationError: If the config is invalid.
    """
    config.validate()
    animal = AnimalClass.PEEKY if rng.random() < 0.5 else AnimalClass.STRETCHY
    overlap_low, overlap_high = config.overlap
    if animal is AnimalClass.PEEKY:
        legs = float(rng.uniform(0.0, overlap_high))
    else:
        legs = float(rng.uniform(overlap_low, 1.0))
    values = {
        "legs_position": legs,
        "shape": sample_shape(config, legs, rng),
        "color": sample_color(config, animal, legs, rng),
    }
    for name in GENERIC_ATTRIBUTES:
        values[name] = config.attributes[name].sample(rng, animal)
    return SceneParameters(class_label=animal, sample_id=sample_id, seed=seed, **values)


def _class_rule_holds(animal: AnimalClass, legs: float) -> bool:
    if animal is AnimalClass.PEEKY:
        return legs <= 0.52
    return legs >= 0.48


def resample_attribute(
    params: SceneParameters,
    attribute: str,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> SceneParameters:
    """
    Redraw one attribute from its unconditional distribution.

    The legs' position, shape and color are redrawn uniformly on ``[0, 1]``; the
    other attributes from their configured distribution with the class left open.
    The class label is never changed, so a legs' intervention may produce a class
    inconsistent scene; ``metadata["class_consistent"]`` records this.

    :param params: Base scene.
    :param attribute: One of ``ATTRIBUTES``.
    :param config: Sampler configuration.
    :param rng: Random stream of the intervention.
    :returns: New parameters differing from ``params`` in ``attribute`` only.
    :raises ConfigurationError: If ``attribute`` is the class label or unknown.
    """
    if attribute == "class_label":
        raise ConfigurationError("The class label is not a resamplable attribute.")
    if attribute not in ATTRIBUTES:
        raise ConfigurationError(f'Unknown attribute "{attribute}".')
    if attribute in ("legs_position", "shape", "color"):
        value = float(rng.random())
    else:
        value = config.attributes[attribute].sample(rng, None)
    consistent = _class_rule_holds(
        params.class_label,
        value if attribute == "legs_position" else params.legs_position,
    )
    if not consistent:
        logger.debug(
            "Intervention on %s leaves %s inconsistent with its class.",
            attribute,
            params.sample_id,
        )
    metadata = dict(params.metadata)
    metadata.update({"intervened": attribute, "class_consistent": consistent})
    return dataclasses.replace(params, metadata=metadata, **{attribute: value})


def validate_scene(params: SceneParameters) -> ValidityReport:
    """
    Check ranges and the class rule of a scene.

    :param params: Scene to check.
    :returns: Report of all violations; never raises.
    """
    report = ValidityReport()
    for name in ATTRIBUTES:
        low, high = ATTRIBUTE_RANGES[name]
        value = getattr(params, name)
        if not (math.isfinite(value) and low <= value <= high):
            report.range_violations.append(
                f"{name}={value} outside [{low:.6g}, {high:.6g}]"
            )
    if not _class_rule_holds(params.class_label, params.legs_position):
        bound = "<= 0.52" if params.class_label is AnimalClass.PEEKY else ">= 0.48"
        report.class_violation = (
            f"{params.class_label.value} needs legs_position {bound},"
            f" {params.legs_position} was given"
        )
    return report


class SceneSampler:
    """
    Draws reproducible scenes for a sampler configuration.

    :param config: Sampler configuration, defaults to the biased study config.
    :param seed: Global seed mixed into every per-sample stream, defaults to ``0``
    """

    def __init__(self, config: SamplerConfig = None, seed: int = None):
        if config is None:
            config = SamplerConfig()
        self.config = config
        if seed is None:
            seed = 0
        self.seed = seed

    config = property(operator.attrgetter("_config"))

    @config.setter
    def config(self, c):
        if c is None:
            raise ValueError("Sampler config cannot be empty.")
        if not isinstance(c, SamplerConfig):
            raise TypeError(f"Config must be a SamplerConfig. {type(c)} was given.")
        self._config = c

    seed = property(operator.attrgetter("_seed"))

    @seed.setter
    def seed(self, s):
        if s is None:
            raise ValueError("Seed cannot be empty.")
        if not isinstance(s, int) or isinstance(s, bool):
            raise TypeError(f"Seed must be an integer. {type(s)} was given.")
        if s < 0:
            raise ValueError(f"Seed must be non-negative. {s} was given.")
        self._seed = s

    def sample(self, sample_id: str) -> SceneParameters:
        """Sample the scene owned by ``sample_id``."""
        rng = sample_stream(self._seed, sample_id)
        return sample_scene(self._config, rng, sample_id=sample_id, seed=self._seed)

    def sample_many(self, n: int, prefix: str = "sample") -> List[SceneParameters]:
        """
        Sample ``n`` scenes with ids ``{prefix}-{index:06d}``.

        :raises ConfigurationError: If ``n < 1``.
        """
        if n < 1:
            raise ConfigurationError(f"At least one sample is needed. {n} was given.")
        return [self.sample(f"{prefix}-{i:06d}") for i in range(n)]

    def resample(
        self, params: SceneParameters, attribute: str, stream_key: str = ""
    ) -> SceneParameters:
        """
        Intervene on one attribute with a stream derived from the base sample.

        :param params: Base scene.
        :param attribute: Attribute to redraw.
        :param stream_key: Extra key separating repeated interventions.
        """
        rng = sample_stream(
            params.seed, f"{params.sample_id}~{attribute}~{stream_key}"
        )
        return resample_attribute(params, attribute, self._config, rng)
