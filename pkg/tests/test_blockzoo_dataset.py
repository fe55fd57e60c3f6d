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
from unittest.mock import patch

# 2. Known third party imports:
import numpy as np

# 3. Local imports in the relative form:
from blockzoo.dataset import (
    DatasetManifest,
    attribute_delta,
    box_downsample,
    generate_dataset,
    load_image,
    load_manifest,
    make_intervention_pairs,
    manifest_path,
    nearest_upsample,
    regenerate_sample,
)
from blockzoo.errors import ConfigurationError, DatasetIOError, ShapeError
from blockzoo.render import RenderConfig, SceneRenderer
from blockzoo.scene import ATTRIBUTES, SamplerConfig

from .test_blockzoo_common import TestBlockzooCommonBase


class TestBlockzooDatasetBase(TestBlockzooCommonBase):
    """Test dataset base with one small rendered split."""

    @classmethod
    def setUpClass(cls):
        """Set up class."""
        super().setUpClass()
        cls.render_config = RenderConfig(width=32, height=32)
        cls.root = cls.tmp_dir / "data"
        cls.manifest = generate_dataset(
            cls.root, 8, "train", SamplerConfig(), cls.render_config, seed=11
        )


class TestBlockzooDataset(TestBlockzooDatasetBase):
    """Test dataset generation and manifests."""

    def test_layout(self):
        """Test files and ids of a split."""
        self.assertEqual(len(self.manifest), 8)
        self.assertTrue(manifest_path(self.root, "train").exists())
        record = self.manifest.records[3]
        self.assertEqual(record.params.sample_id, "train-000003")
        self.assertEqual(record.image, "train/images/train-000003.png")
        self.assertEqual(record.mask, "train/masks/train-000003_mask.png")
        self.assertTrue((self.root / record.image).exists())
        self.assertTrue((self.root / record.mask).exists())
        self.assertEqual(sum(self.manifest.class_counts.values()), 8)

    def test_manifest_round_trip(self):
        """Test reading back a written manifest."""
        loaded = load_manifest(manifest_path(self.root, "train"))
        self.assertEqual(loaded, self.manifest)
        self.assertEqual(loaded.root, self.root)
        self.assertEqual(loaded.seed, 11)
        self.assertEqual(loaded.render, self.render_config)
        header = manifest_path(self.root, "train").read_text().splitlines()[0]
        self.assertIn('"kind": "header"', header)

    def test_manifest_without_header(self):
        """Test manifests must start with a header."""
        lines = self.manifest.to_jsonl().splitlines()
        with self.assertRaises(ConfigurationError):
            DatasetManifest.from_jsonl("\n".join(lines[1:]))
        with self.assertRaises(ConfigurationError):
            DatasetManifest.from_jsonl("")

    def test_arrays(self):
        """Test label, attribute and image arrays."""
        labels = self.manifest.labels()
        self.assertEqual(labels.shape, (8,))
        self.assertEqual(labels.sum(), self.manifest.class_counts["stretchy"])
        self.assertEqual(self.manifest.attribute_matrix().shape, (8, len(ATTRIBUTES)))
        images = self.manifest.image_array()
        self.assertEqual(images.shape, (8, 32, 32, 3))
        self.assertTrue(0.0 <= images.min() and images.max() <= 1.0)
        raw = self.manifest.image_array([0, 2], raw=True)
        self.assertEqual(raw.dtype, np.uint8)
        np.testing.assert_array_equal(raw[1] / 255.0, images[2])

    def test_resume_skips_existing(self):
        """Test an existing split is not rendered again."""
        with patch.object(SceneRenderer, "render", side_effect=AssertionError):
            again = generate_dataset(
                self.root, 8, "train", SamplerConfig(), self.render_config, seed=11
            )
        self.assertEqual(again, self.manifest)

    def test_worker_count_invariance(self):
        """Test the split does not depend on the worker count."""
        other = generate_dataset(
            self.tmp_dir / "threaded",
            8,
            "train",
            SamplerConfig(),
            self.render_config,
            seed=11,
            workers=3,
        )
        self.assertEqual(other.records, self.manifest.records)
        for a, b in zip(other.records, self.manifest.records):
            self.assertEqual(
                (other.root / a.image).read_bytes(), (self.root / b.image).read_bytes()
            )

    def test_regenerate_sample(self):
        """Test stored parameters reproduce the stored image."""
        record = self.manifest.records[5]
        rendered = regenerate_sample(record, self.render_config)
        np.testing.assert_array_equal(
            rendered.image / 255.0, load_image(self.root / record.image)
        )

    def test_generate_errors(self):
        """Test invalid requests and failing writes."""
        with self.assertRaises(ConfigurationError):
            generate_dataset(self.tmp_dir / "empty", 0, "train")
        with patch.object(DatasetManifest, "write", side_effect=OSError("disk full")):
            with self.assertRaises(DatasetIOError) as ctx:
                generate_dataset(
                    self.root, 8, "train", SamplerConfig(), self.render_config, seed=11
                )
        self.assertEqual(ctx.exception.completed, 8)


class TestBlockzooInterventionPairs(TestBlockzooDatasetBase):
    """Test intervention pairs."""

    def test_pairs(self):
        """Test rendered pairs differ in one attribute."""
        pairs = make_intervention_pairs(self.manifest, "background", 4)
        self.assertEqual(len(pairs), 4)
        self.assertEqual(len({p.base.sample_id for p in pairs}), 4)
        for pair in pairs:
            self.assertEqual(pair.attribute, "background")
            self.assertEqual(
                dataclasses.replace(
                    pair.modified,
                    background=pair.base.background,
                    sample_id=pair.base.sample_id,
                ),
                pair.base,
            )
            self.assertAlmostEqual(
                pair.delta, pair.modified.background - pair.base.background
            )
            self.assertTrue(pair.base_image.exists())
            self.assertTrue(pair.modified_image.exists())
            self.assertIn("interventions/background", pair.modified_image.as_posix())

    def test_pairs_reproducible(self):
        """Test pairs are reproducible without rendering."""
        first = make_intervention_pairs(self.manifest, "color", 3, render=False)
        second = make_intervention_pairs(self.manifest, "color", 3, render=False)
        self.assertEqual(
            [(p.base, p.modified) for p in first],
            [(p.base, p.modified) for p in second],
        )
        self.assertIsNone(first[0].modified_image)

    def test_pairs_errors(self):
        """Test invalid pair requests."""
        with self.assertRaises(ConfigurationError):
            make_intervention_pairs(self.manifest, "class_label", 2)
        with self.assertRaises(ConfigurationError):
            make_intervention_pairs(self.manifest, "color", 9)
        detached = dataclasses.replace(self.manifest, root=None)
        with self.assertRaises(ConfigurationError):
            make_intervention_pairs(detached, "color", 2)

    def test_yaw_delta_wraps(self):
        """Test yaw changes take the short way round."""
        base = self._scene(rotation_yaw=0.1)
        modified = self._scene(rotation_yaw=2 * math.pi - 0.1)
        self.assertAlmostEqual(attribute_delta(base, modified, "rotation_yaw"), -0.2)
        self.assertAlmostEqual(attribute_delta(modified, base, "rotation_yaw"), 0.2)
        self.assertAlmostEqual(
            attribute_delta(base, self._scene(color=0.9), "color"), 0.7
        )


class TestBlockzooResampling(TestBlockzooCommonBase):
    """Test box filtering and pixel repetition."""

    def test_box_downsample(self):
        """Test block averages."""
        images = np.arange(2 * 4 * 4 * 1, dtype=float).reshape(2, 4, 4, 1)
        small = box_downsample(images, 2)
        self.assertEqual(small.shape, (2, 2, 2, 1))
        self.assertAlmostEqual(small[0, 0, 0, 0], np.mean([0, 1, 4, 5]))
        with self.assertRaises(ShapeError):
            box_downsample(images, 3)

    def test_nearest_upsample(self):
        """Test pixel repetition."""
        images = np.arange(4, dtype=float).reshape(1, 2, 2, 1)
        large = nearest_upsample(images, 4, 4)
        self.assertEqual(large.shape, (1, 4, 4, 1))
        np.testing.assert_array_equal(box_downsample(large, 2), images)
        with self.assertRaises(ShapeError):
            nearest_upsample(images, 5, 4)


if __name__ == "__main__":
    unittest.main()
