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

# 1. Standard library imports:
import dataclasses
import math
import unittest

# 2. Known third party imports:
import numpy as np

# 3. Local imports in the relative form:
from blockzoo.dataset import InterventionPair, generate_dataset, make_intervention_pairs
from blockzoo.errors import (
    ArgumentError,
    ConfigurationError,
    ShapeError,
    UndefinedFitError,
)
from blockzoo.flow import CounterfactualTrajectory, TrajectoryStep
from blockzoo.importance import (
    ImportanceReport,
    ModelScorer,
    ParameterScorer,
    analyze_importance,
    attribute_range,
    attribute_r_squared,
    feature_angle,
    interpolation_attribute_change,
    mean_feature_norm,
    median_abs_logit_change,
    prediction_flip_rate,
)
from blockzoo.render import RenderConfig
from blockzoo.scene import ATTRIBUTES, SamplerConfig, resample_attribute

from .test_blockzoo_common import TestBlockzooCommonBase


def legs_oracle(params) -> float:
    return 10.0 * (params.legs_position - 0.5)


class FixedScorer:
    """Scorer returning given logits."""

    def __init__(self, base, modified):
        self.base = np.asarray(base, dtype=float)
        self.modified = np.asarray(modified, dtype=float)

    def pair_logits(self, pairs):
        return self.base, self.modified

    def pair_features(self, pairs):
        return None


class MeanProbe:
    """Probe reading the mean pixel value as every attribute."""

    def __init__(self, size: int = 32):
        self.input_shape = (size, size, 3)

    def predict(self, images):
        self.last_shape = images.shape
        return np.repeat(images.mean(axis=(1, 2, 3))[:, None], len(ATTRIBUTES), axis=1)


class ReadingsProbe:
    """Probe returning fixed attribute readings, one row per step."""

    input_shape = (16, 16, 3)

    def __init__(self, readings):
        self.readings = np.asarray(readings, dtype=float)

    def predict(self, images):
        return self.readings[: len(images)]


class PixelModel:
    """Model scoring mean brightness with the first pixels as features."""

    w = np.ones(4)

    def predict_logits(self, images):
        return images.mean(axis=(1, 2, 3)) - 0.5

    def features(self, images):
        return images.reshape(len(images), -1)[:, :4]


class TestBlockzooImportanceBase(TestBlockzooCommonBase):
    """Test importance base with uniform legs' oracle pairs."""

    @classmethod
    def setUpClass(cls):
        """Set up class."""
        super().setUpClass()
        rng = np.random.default_rng(0)
        config = SamplerConfig()
        scene = cls._scene()
        cls.pairs = {}
        for attribute in ("legs_position", "background"):
            pairs = []
            for i, legs in enumerate(rng.random(40_000)):
                base = dataclasses.replace(
                    scene, legs_position=float(legs), sample_id=f"pair-{i:06d}"
                )
                modified = resample_attribute(base, attribute, config, rng)
                pairs.append(InterventionPair(base, modified, attribute))
            cls.pairs[attribute] = pairs
        cls.oracle = ParameterScorer(legs_oracle)


class TestBlockzooFlipAndMedian(TestBlockzooImportanceBase):
    """Test prediction flips and median logit changes."""

    def test_oracle_legs(self):
        """Test the closed form values of the legs' oracle."""
        pairs = self.pairs["legs_position"]
        flips = prediction_flip_rate(self.oracle, pairs)
        self.assertAlmostEqual(flips, 50.0, delta=1.5)
        self.assertAlmostEqual(
            median_abs_logit_change(self.oracle, pairs),
            10.0 * (1.0 - math.sqrt(0.5)),
            delta=0.05,
        )

    def test_oracle_background(self):
        """Test an ignored attribute never flips the prediction."""
        pairs = self.pairs["background"]
        self.assertEqual(prediction_flip_rate(self.oracle, pairs), 0.0)
        self.assertEqual(median_abs_logit_change(self.oracle, pairs), 0.0)

    def test_constant_scorer(self):
        """Test a constant scorer."""
        scorer = ParameterScorer(lambda params: 1.5)
        pairs = self.pairs["legs_position"][:100]
        self.assertEqual(median_abs_logit_change(scorer, pairs), 0.0)
        self.assertEqual(prediction_flip_rate(scorer, pairs), 0.0)

    def test_median(self):
        """Test the median of three and four changes."""
        pairs = self.pairs["legs_position"][:4]
        three = FixedScorer([0, 0, 0], [1, -3, 2])
        self.assertEqual(median_abs_logit_change(three, pairs[:3]), 2.0)
        four = FixedScorer([0] * 4, [1, 2, 3, 4])
        self.assertEqual(median_abs_logit_change(four, pairs), 2.5)

    def test_zero_logit_is_positive(self):
        """Test the tie rule."""
        pairs = self.pairs["legs_position"][:2]
        scorer = FixedScorer([0.0, -1.0], [1.0, 0.0])
        self.assertEqual(prediction_flip_rate(scorer, pairs), 50.0)

    def test_scale_and_order_invariance(self):
        """Test scaled logits and permuted pairs."""
        pairs = self.pairs["legs_position"][:1000]
        scaled = ParameterScorer(lambda params: 3.0 * legs_oracle(params))
        expected = prediction_flip_rate(self.oracle, pairs)
        self.assertEqual(prediction_flip_rate(scaled, pairs), expected)
        self.assertAlmostEqual(
            median_abs_logit_change(scaled, pairs),
            3.0 * median_abs_logit_change(self.oracle, pairs),
        )
        shuffled = [pairs[i] for i in np.random.default_rng(1).permutation(len(pairs))]
        self.assertEqual(
            prediction_flip_rate(self.oracle, shuffled),
            prediction_flip_rate(self.oracle, pairs),
        )
        self.assertEqual(
            median_abs_logit_change(self.oracle, shuffled),
            median_abs_logit_change(self.oracle, pairs),
        )

    def test_empty(self):
        """Test empty pair lists."""
        with self.assertRaises(ArgumentError):
            prediction_flip_rate(self.oracle, [])
        with self.assertRaises(ArgumentError):
            median_abs_logit_change(self.oracle, [])

    def test_analyze_importance(self):
        """Test the report over the oracle pairs."""
        report = analyze_importance(
            self.oracle,
            {
                "legs_position": self.pairs["legs_position"][:2000],
                "background": self.pairs["background"][:2000],
            },
        )
        self.assertEqual(report.scorer, "ParameterScorer")
        self.assertGreater(
            report["legs_position"].prediction_flip_pct,
            report["background"].prediction_flip_pct,
        )
        self.assertAlmostEqual(report["legs_position"].r_squared, 1.0)
        self.assertIsNone(report["legs_position"].mean_feature_angle_deg)
        self.assertNotIn("Angle [deg]", report.to_frame().columns)
        self.assertIn("Prediction Flip [%]", report.to_table())
        restored = ImportanceReport.from_dict(report.to_dict())
        self.assertEqual(restored, report)
        with self.assertRaises(KeyError):
            report["color"]


class TestBlockzooRSquared(TestBlockzooCommonBase):
    """Test the coefficient of determination."""

    def test_examples(self):
        """Test exact and uncorrelated fits."""
        self.assertAlmostEqual(attribute_r_squared([1, 2, 3], [2, 4, 6]), 1.0)
        self.assertAlmostEqual(attribute_r_squared([1, 2, 3], [1, -1, 1]), 0.0)

    def test_conventions(self):
        """Test degenerate inputs."""
        with self.assertRaises(UndefinedFitError):
            attribute_r_squared([2, 2, 2], [1, 2, 3])
        self.assertEqual(attribute_r_squared([1, 2, 3], [5, 5, 5]), 1.0)
        with self.assertRaises(ArgumentError):
            attribute_r_squared([1, 2], [1, 2])
        with self.assertRaises(ArgumentError):
            attribute_r_squared([1, 2, 3], [1, 2])

    def test_affine_invariance(self):
        """Test affine maps of the logit change keep R²."""
        rng = self._rng()
        x = rng.random(50)
        y = x + 0.3 * rng.random(50)
        r2 = attribute_r_squared(x, y)
        self.assertTrue(0.0 <= r2 <= 1.0)
        self.assertAlmostEqual(attribute_r_squared(x, -2.0 * y + 7.0), r2)


class TestBlockzooFeatureAngle(TestBlockzooCommonBase):
    """Test feature angles and norms."""

    def test_examples(self):
        """Test parallel, orthogonal and antiparallel vectors."""
        w = np.array([1.0, 2.0, -1.0])
        self.assertAlmostEqual(feature_angle(w, w), 0.0, places=5)
        self.assertAlmostEqual(feature_angle(np.array([2.0, -1.0, 0.0]), w), 90.0)
        self.assertAlmostEqual(feature_angle(-2.0 * w, w), 180.0, places=5)

    def test_invariances(self):
        """Test scaling and negation."""
        rng = self._rng()
        delta, w = rng.normal(size=5), rng.normal(size=5)
        angle = feature_angle(delta, w)
        self.assertAlmostEqual(feature_angle(4.0 * delta, w), angle)
        self.assertAlmostEqual(feature_angle(-delta, w), 180.0 - angle)
        with self.assertRaises(ArgumentError):
            feature_angle(np.zeros(5), w)

    def test_mean_norm(self):
        """Test the mean feature norm."""
        differences = np.array([[3.0, 4.0], [0.0, 1.0]])
        self.assertAlmostEqual(mean_feature_norm(differences), 3.0)


class TestBlockzooInterpolationChange(TestBlockzooCommonBase):
    """Test attribute changes along trajectories."""

    @staticmethod
    def _trajectory(levels) -> CounterfactualTrajectory:
        steps = [
            TrajectoryStep(
                alpha=float(i),
                target_logit=float(i),
                logit=float(i),
                vector=np.full(16 * 16 * 3, level - 0.5),
                reencoded_logit=float(i),
                decode_error=0.0,
            )
            for i, level in enumerate(levels)
        ]
        return CounterfactualTrajectory(
            np.zeros(768), 0.0, steps, (0.5, 99.5), image_shape=(16, 16, 3)
        )

    def test_range(self):
        """Test max minus min of readings."""
        self.assertAlmostEqual(attribute_range([0.2, 0.5, 0.9]), 0.7)
        probe = MeanProbe()
        trajectory = self._trajectory([0.2, 0.5, 0.9])
        change = interpolation_attribute_change(probe, [trajectory])
        self.assertEqual(probe.last_shape, (3, 32, 32, 3))
        self.assertAlmostEqual(change["shape"][0], 0.7)
        self.assertEqual(change["shape"][1], 0.0)

    def test_circular_range(self):
        """Test yaw readings across the wrap point give the short arc."""
        self.assertAlmostEqual(
            attribute_range([0.05, 6.25], circular=True), 2 * math.pi - 6.2
        )
        self.assertAlmostEqual(attribute_range([6.25, 0.05]), 6.2)
        self.assertAlmostEqual(attribute_range([1.0, 2.0, 3.0], circular=True), 2.0)
        self.assertEqual(attribute_range([4.0, 4.0], circular=True), 0.0)
        yaw = ATTRIBUTES.index("rotation_yaw")
        readings = np.full((3, len(ATTRIBUTES)), 0.5)
        readings[:, yaw] = [0.05, 6.25, 0.1]
        readings[:, 0] = [0.1, 0.3, 0.2]
        change = interpolation_attribute_change(
            ReadingsProbe(readings), [self._trajectory([0.2, 0.5, 0.9])]
        )
        self.assertAlmostEqual(change["rotation_yaw"][0], 2 * math.pi - 6.15)
        self.assertAlmostEqual(change["legs_position"][0], 0.2)
        self.assertEqual(change["color"][0], 0.0)

    def test_constant(self):
        """Test constant readings give no change."""
        change = interpolation_attribute_change(
            MeanProbe(), [self._trajectory([0.4] * 5), self._trajectory([0.6] * 5)]
        )
        self.assertEqual(set(change), set(ATTRIBUTES))
        self.assertTrue(all(mean == 0.0 for mean, _ in change.values()))

    def test_errors(self):
        """Test probe size mismatches and empty input."""
        with self.assertRaises(ShapeError):
            trajectory = self._trajectory([0.1, 0.2])
            interpolation_attribute_change(MeanProbe(20), [trajectory])
        with self.assertRaises(ArgumentError):
            interpolation_attribute_change(MeanProbe(), [])


class TestBlockzooModelScorer(TestBlockzooCommonBase):
    """Test scoring rendered pairs with a model."""

    @classmethod
    def setUpClass(cls):
        """Set up class."""
        super().setUpClass()
        manifest = generate_dataset(
            cls.tmp_dir / "data",
            6,
            "train",
            SamplerConfig(),
            RenderConfig(width=32, height=32),
            seed=4,
        )
        cls.pairs = make_intervention_pairs(manifest, "background", 4)
        cls.bare_pairs = make_intervention_pairs(
            manifest, "background", 4, render=False
        )

    def test_model_scorer(self):
        """Test logits and feature changes of rendered pairs."""
        scorer = ModelScorer(PixelModel(), batch_size=3)
        base, modified = scorer.pair_logits(self.pairs)
        self.assertEqual(base.shape, (4,))
        self.assertEqual(scorer.pair_features(self.pairs).shape, (4, 4))
        report = analyze_importance(scorer, {"background": self.pairs})
        row = report["background"]
        self.assertEqual(row.pair_count, 4)
        self.assertIsNotNone(row.mean_feature_norm)
        self.assertTrue(0.0 <= row.prediction_flip_pct <= 100.0)

    def test_unrendered_pairs(self):
        """Test model scoring needs images."""
        with self.assertRaises(ConfigurationError):
            ModelScorer(PixelModel()).pair_logits(self.bare_pairs)


if __name__ == "__main__":
    unittest.main()
