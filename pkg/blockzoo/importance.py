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
Ground truth importance of the generative attributes for a scoring model.

A scorer turns intervention pairs into base and modified logits. ``ParameterScorer``
scores scene parameters directly (an oracle), ``ModelScorer`` scores the rendered
images with a trained classifier or flow.
"""

# 1. Standard library imports:
import dataclasses
import json
import logging
import math
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

# 2. Known third party imports:
import numpy as np
import pandas as pd
from scipy import stats

# 3. Local imports in the relative form:
from .dataset import InterventionPair, load_image
from .errors import ArgumentError, ConfigurationError, UndefinedFitError
from .flow import CounterfactualTrajectory
from .scene import ATTRIBUTES, SceneParameters

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class ParameterScorer:
    """
    Scores scenes with a function of their parameters.

    :param function: Maps ``SceneParameters`` to a logit.
    """

    def __init__(self, function: Callable[[SceneParameters], float]):
        self.function = function

    def pair_logits(
        self, pairs: Sequence[InterventionPair]
    ) -> Tuple[np.ndarray, np.ndarray]:
        base = [self.function(p.base) for p in pairs]
        modified = [self.function(p.modified) for p in pairs]
        return np.array(base, dtype=np.float64), np.array(modified, dtype=np.float64)

    def pair_features(self, pairs):
        return None


class ModelScorer:
    """
    Scores the rendered pair images with a trained model.

    The model needs ``predict_logits(images)``; a model that also has ``features``
    and a head weight ``w`` (the flow) additionally yields feature differences.

    :param model: A ``ConvClassifier`` or ``FlowModel``.
    :param batch_size: Images scored per call, defaults to ``64``
    """

    def __init__(self, model, batch_size: int = 64):
        self.model = model
        self.batch_size = batch_size

    def _images(
        self, pairs: Sequence[InterventionPair], which: str
    ) -> Iterable[np.ndarray]:
        paths = [getattr(p, f"{which}_image") for p in pairs]
        if any(path is None for path in paths):
            raise ConfigurationError("Model scoring needs rendered intervention pairs.")
        for start in range(0, len(paths), self.batch_size):
            batch = paths[start : start + self.batch_size]
            yield np.stack([load_image(path) for path in batch])

    def _apply(self, pairs, which: str, method: Callable) -> np.ndarray:
        return np.concatenate([method(batch) for batch in self._images(pairs, which)])

    def pair_logits(
        self, pairs: Sequence[InterventionPair]
    ) -> Tuple[np.ndarray, np.ndarray]:
        predict = self.model.predict_logits
        base = self._apply(pairs, "base", predict)
        return base, self._apply(pairs, "modified", predict)

    def pair_features(self, pairs: Sequence[InterventionPair]) -> Optional[np.ndarray]:
        """Feature differences ``h(modified) - h(base)``, ``None`` for a convnet."""
        if not (hasattr(self.model, "features") and hasattr(self.model, "w")):
            return None
        features = self.model.features
        base = self._apply(pairs, "base", features)
        return self._apply(pairs, "modified", features) - base


def _require_pairs(pairs: Sequence[InterventionPair]) -> None:
    if not len(pairs):
        raise ArgumentError("At least one intervention pair is needed.")


def positive(logits: np.ndarray) -> np.ndarray:
    """Predicted class of logits; a logit of exactly zero counts as positive."""
    return np.asarray(logits) >= 0


def flip_percentage(base: np.ndarray, modified: np.ndarray) -> float:
    return float(100.0 * np.mean(positive(base) != positive(modified)))


def prediction_flip_rate(scorer, pairs: Sequence[InterventionPair]) -> float:
    """
    Percentage of pairs whose predicted class changes under the intervention.

    :raises ArgumentError: If ``pairs`` is empty.
    """
    _require_pairs(pairs)
    return flip_percentage(*scorer.pair_logits(pairs))


def median_abs_logit_change(scorer, pairs: Sequence[InterventionPair]) -> float:
    """
    Median over pairs of ``|logit(modified) - logit(base)|``.

    :raises ArgumentError: If ``pairs`` is empty.
    """
    _require_pairs(pairs)
    base, modified = scorer.pair_logits(pairs)
    return float(np.median(np.abs(modified - base)))


def attribute_r_squared(
    deltas_attr: Sequence[float], deltas_logit: Sequence[float]
) -> float:
    """
    Coefficient of determination of the least squares line of logit on attribute change.

    A constant logit change is fitted perfectly and yields ``1``.

    :raises ArgumentError: On unequal lengths or fewer than 3 values.
    :raises UndefinedFitError: If every attribute change is equal.
    """
    x = np.asarray(deltas_attr, dtype=np.float64)
    y = np.asarray(deltas_logit, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ArgumentError("Attribute and logit changes must be equally long vectors.")
    if len(x) < 3:
        raise ArgumentError(f"At least 3 changes are needed. {len(x)} were given.")
    if np.all(x == x[0]):
        raise UndefinedFitError("Attribute changes have zero variance.")
    if np.all(y == y[0]):
        return 1.0
    return float(stats.linregress(x, y).rvalue ** 2)


def feature_angle(delta_h: np.ndarray, w: np.ndarray) -> float:
    """
    Angle in degrees between a feature change and the head weight.

    :raises ArgumentError: If either vector is zero.
    """
    delta_h = np.asarray(delta_h, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    norms = np.linalg.norm(delta_h) * np.linalg.norm(w)
    if norms == 0:
        raise ArgumentError("Feature angle is undefined for a zero vector.")
    return math.degrees(math.acos(np.clip(delta_h @ w / norms, -1.0, 1.0)))


def mean_feature_norm(delta_h: np.ndarray) -> float:
    """Mean Euclidean norm of ``(N, d)`` feature changes."""
    return float(np.linalg.norm(np.atleast_2d(delta_h), axis=1).mean())


def attribute_range(readings: Sequence[float], circular: bool = False) -> float:
    """
    Spread of one attribute's readings along a trajectory.

    Linear readings give ``max - min``. Circular readings (radians) give the length
    of the shortest arc holding all of them, so values on both sides of ``0`` and
    ``2pi`` are close.
    """
    readings = np.asarray(readings, dtype=np.float64)
    if not circular:
        return float(readings.max() - readings.min())
    angles = np.sort(np.mod(readings, TWO_PI))
    gaps = np.diff(np.append(angles, angles[0] + TWO_PI))
    return float(TWO_PI - gaps.max())


def _trajectory_ranges(readings: np.ndarray) -> np.ndarray:
    return np.array(
        [
            attribute_range(readings[:, i], circular=name == "rotation_yaw")
            for i, name in enumerate(ATTRIBUTES)
        ]
    )


def interpolation_attribute_change(
    probe, trajectories: Sequence[CounterfactualTrajectory]
) -> Dict[str, Tuple[float, float]]:
    """
    Mean and standard deviation over trajectories of each attribute's probe range.

    Step images are nearest upsampled to the probe's input size. The yaw spread is
    the shortest arc holding its readings.

    :param probe: Model with ``input_shape`` and ``predict(images) -> (N, 10)``.
    :param trajectories: Non-empty list of trajectories.
    :raises ShapeError: If the step images cannot be brought to the probe's size.
    """
    if not len(trajectories):
        raise ArgumentError("At least one trajectory is needed.")
    height, width = probe.input_shape[:2]
    ranges = np.array(
        [
            _trajectory_ranges(probe.predict(trajectory.images(height, width)))
            for trajectory in trajectories
        ]
    )
    return {
        name: (float(ranges[:, i].mean()), float(ranges[:, i].std()))
        for i, name in enumerate(ATTRIBUTES)
    }


@dataclasses.dataclass
class AttributeImportance:
    """Importance metrics of one attribute over one pair set."""

    attribute: str
    pair_count: int
    prediction_flip_pct: float
    median_abs_logit_change: float
    r_squared: Optional[float] = None
    mean_feature_angle_deg: Optional[float] = None
    mean_feature_norm: Optional[float] = None
    interpolation_change_mean: Optional[float] = None
    interpolation_change_std: Optional[float] = None


@dataclasses.dataclass
class ImportanceReport:
    """Per-attribute importance, in the order the attributes were analyzed."""

    rows: List[AttributeImportance]
    scorer: str = ""

    def __getitem__(self, attribute: str) -> AttributeImportance:
        for row in self.rows:
            if row.attribute == attribute:
                return row
        raise KeyError(attribute)

    def to_dict(self) -> Dict[str, Any]:
        rows = [dataclasses.asdict(r) for r in self.rows]
        return {"scorer": self.scorer, "attributes": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "ImportanceReport":
        return cls(
            [AttributeImportance(**row) for row in document["attributes"]],
            document.get("scorer", ""),
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "Factor": [r.attribute for r in self.rows],
                "Prediction Flip [%]": [r.prediction_flip_pct for r in self.rows],
                "Median Logit Change": [r.median_abs_logit_change for r in self.rows],
                "R²": [r.r_squared for r in self.rows],
                "Angle [deg]": [r.mean_feature_angle_deg for r in self.rows],
                "Feature Norm": [r.mean_feature_norm for r in self.rows],
                "Interpolation Change": [
                    r.interpolation_change_mean for r in self.rows
                ],
                "Pairs": [r.pair_count for r in self.rows],
            }
        )
        return frame.dropna(axis=1, how="all")

    def to_table(self) -> str:
        """Aligned text table; columns that are not applicable are left out."""
        return self.to_frame().to_string(index=False, float_format=lambda v: f"{v:.3f}")


def analyze_importance(
    scorer,
    pairs_by_attribute: Dict[str, Sequence[InterventionPair]],
    probe=None,
    trajectories: Sequence[CounterfactualTrajectory] = None,
    w: np.ndarray = None,
) -> ImportanceReport:
    """
    Compute every importance metric for each attribute's pair set.

    :param scorer: A ``ParameterScorer`` or ``ModelScorer``.
    :param pairs_by_attribute: Intervention pairs keyed by attribute.
    :param probe: Attribute probe for the interpolation metric.
    :param trajectories: Counterfactual trajectories for the interpolation metric.
    :param w: Head weight for the angle metric, defaults to the scorer model's ``w``.
    """
    if w is None:
        w = getattr(getattr(scorer, "model", None), "w", None)
    interpolation = None
    if probe is not None and trajectories:
        interpolation = interpolation_attribute_change(probe, trajectories)
    rows = []
    for attribute, pairs in pairs_by_attribute.items():
        _require_pairs(pairs)
        base, modified = scorer.pair_logits(pairs)
        change = modified - base
        row = AttributeImportance(
            attribute=attribute,
            pair_count=len(pairs),
            prediction_flip_pct=flip_percentage(base, modified),
            median_abs_logit_change=float(np.median(np.abs(change))),
        )
        try:
            row.r_squared = attribute_r_squared([p.delta for p in pairs], change)
        except (UndefinedFitError, ArgumentError) as e:
            logger.warning("R² of %s not computed: %s", attribute, e)
        delta_h = scorer.pair_features(pairs) if w is not None else None
        if delta_h is not None:
            nonzero = [d for d in delta_h if np.any(d)]
            if nonzero:
                angles = [feature_angle(d, w) for d in nonzero]
                row.mean_feature_angle_deg = float(np.mean(angles))
            row.mean_feature_norm = mean_feature_norm(delta_h)
        if interpolation is not None and attribute in interpolation:
            mean, std = interpolation[attribute]
            row.interpolation_change_mean, row.interpolation_change_std = mean, std
        logger.info(
            "%s: flip %.2f%% median change %.3f",
            attribute,
            row.prediction_flip_pct,
            row.median_abs_logit_change,
        )
        rows.append(row)
    return ImportanceReport(rows, type(scorer).__name__)
