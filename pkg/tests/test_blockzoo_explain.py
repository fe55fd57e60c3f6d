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
import io
import json
import types
import unittest

# 2. Known third party imports:
import numpy as np
from PIL import Image
from pypdfium2 import PdfDocument

# 3. Local imports in the relative form:
from blockzoo.errors import (
    ArgumentError,
    ConfigurationError,
    EmptyExplanationError,
    InsufficientPoolError,
)
from blockzoo.explain import (
    BIN_LABELS,
    CELL_SIZE,
    HEADER_HEIGHT,
    ROW_LABEL_WIDTH,
    ConceptSet,
    GridLayout,
    baseline_layout,
    column_targets,
    compose_baseline_grid,
    compose_concept_grid,
    compose_counterfactual_grid,
    export_handout,
    factorize_activations,
    highlight,
    logit_bin_edges,
    reconstruction_error,
    save_grid,
    select_by_correlation,
    select_concepts,
)
from blockzoo.flow import FLOW_IMAGE_SHAPE, FlowModel

from .test_blockzoo_common import TestBlockzooCommonBase


class MeanRedScorer:
    """Scores an image by its mean red channel."""

    def predict_logits(self, images):
        return np.asarray(images)[..., 0].mean(axis=(1, 2))


def _pool(n: int, seed: int = 0) -> types.SimpleNamespace:
    """Manifest stand-in with uniformly colored images."""
    rng = np.random.default_rng(seed)
    images = np.ones((n, 8, 8, 3)) * rng.uniform(0.0, 1.0, (n, 1, 1, 3))
    records = [
        types.SimpleNamespace(params=types.SimpleNamespace(sample_id=f"s{i:03d}"))
        for i in range(n)
    ]
    return types.SimpleNamespace(records=records, image_array=lambda: images)


class TestBlockzooBaseline(TestBlockzooCommonBase):
    """Test the logit sorted baseline grid."""

    def setUp(self):
        """Set up."""
        super().setUp()
        self.logits = np.arange(1.0, 101.0)
        self.ids = [f"s{i:03d}" for i in range(100)]

    def test_bin_edges(self):
        """Test quantile and range edges."""
        np.testing.assert_allclose(
            logit_bin_edges(self.logits), [1.0, 20.8, 40.6, 60.4, 80.2, 100.0]
        )
        np.testing.assert_allclose(
            logit_bin_edges(np.array([0.0, 10.0]), "range"), [0, 2, 4, 6, 8, 10]
        )
        with self.assertRaises(ConfigurationError):
            logit_bin_edges(self.logits, "log")

    def test_layout(self):
        """Test 10 cells per column, sorted and inside their bin."""
        layout = baseline_layout(self.logits, self.ids, self._rng())
        self.assertEqual(len(layout.cells), 50)
        self.assertEqual(len({cell.sample_id for cell in layout.cells}), 50)
        for col, label in enumerate(BIN_LABELS):
            cells = layout.column(col)
            self.assertEqual([cell.row for cell in cells], list(range(10)))
            logits = [cell.logit for cell in cells]
            self.assertEqual(logits, sorted(logits))
            self.assertTrue(all(cell.bin == label for cell in cells))
            low, high = layout.bin_edges[col], layout.bin_edges[col + 1]
            self.assertTrue(all(low <= logit <= high for logit in logits))

    def test_pool_order(self):
        """Test the choice depends on the seed but not on the pool order."""
        first = baseline_layout(self.logits, self.ids, self._rng(4))
        order = self._rng(9).permutation(100)
        shuffled = baseline_layout(
            self.logits[order], [self.ids[i] for i in order], self._rng(4)
        )
        self.assertEqual(
            [c.sample_id for c in first.cells], [c.sample_id for c in shuffled.cells]
        )

    def test_small_pool(self):
        """Test pools that cannot fill the grid."""
        with self.assertRaises(ArgumentError):
            baseline_layout(self.logits[:49], self.ids[:49], self._rng())
        with self.assertRaises(ArgumentError):
            baseline_layout(self.logits, self.ids[:99], self._rng())
        logits = np.append(np.arange(60.0), 1000.0)
        ids = [f"s{i:03d}" for i in range(61)]
        with self.assertRaises(InsufficientPoolError) as e:
            baseline_layout(logits, ids, self._rng(), "range")
        self.assertEqual(e.exception.bin_label, "certain Peeky")
        self.assertEqual(e.exception.available, 0)

    def test_compose(self):
        """Test the composed baseline grid image."""
        layout, image = compose_baseline_grid(MeanRedScorer(), _pool(60), self._rng())
        self.assertEqual(image.size, (5 * CELL_SIZE, HEADER_HEIGHT + 10 * CELL_SIZE))
        self.assertEqual(layout.image_size, image.size)
        self.assertEqual(layout.metadata["bin_mode"], "quantile")
        pixels = np.asarray(image)
        cell = layout.cells[0]
        red = pixels[HEADER_HEIGHT + CELL_SIZE // 2, CELL_SIZE // 2, 0]
        self.assertAlmostEqual(red / 255.0, cell.logit, delta=1.0 / 255.0)


class TestBlockzooCounterfactualGrid(TestBlockzooCommonBase):
    """Test the counterfactual interpolation grid."""

    def setUp(self):
        """Set up."""
        super().setUp()
        self.model = FlowModel(
            768, blocks=1, prior_blocks=1, hidden=8, image_shape=FLOW_IMAGE_SHAPE
        )
        self.model.record_percentiles(np.linspace(-5.0, 5.0, 1001))

    def test_column_targets(self):
        """Test edges and centers of both bin modes."""
        edges, targets = column_targets(self.model)
        np.testing.assert_allclose(edges, [-5, -3, -1, 1, 3, 5], atol=1e-9)
        np.testing.assert_allclose(targets, [-4, -2, 0, 2, 4], atol=1e-9)
        edges, targets = column_targets(self.model, "range")
        np.testing.assert_allclose(edges, np.linspace(-5, 5, 6), atol=1e-9)
        np.testing.assert_allclose(targets, [-4, -2, 0, 2, 4], atol=1e-9)
        with self.assertRaises(ConfigurationError):
            column_targets(self.model, "log")

    def test_grid(self):
        """Test 50 cells with monotone rows and an unsure center column."""
        seeds = self._rng(2).uniform(0.2, 0.8, (10, 32, 32, 3))
        layout, image, trajectories = compose_counterfactual_grid(self.model, seeds)
        self.assertEqual(len(layout.cells), 50)
        self.assertEqual(len(trajectories), 10)
        self.assertEqual(image.size, (5 * CELL_SIZE, HEADER_HEIGHT + 10 * CELL_SIZE))
        self.assertIsInstance(layout.metadata["decode_warnings"], list)
        edges = layout.bin_edges
        for row in range(10):
            logits = [c.logit for c in layout.cells if c.row == row]
            self.assertTrue(np.all(np.diff(logits) > 0))
            self.assertTrue(edges[2] <= logits[2] <= edges[3])

    def test_errors(self):
        """Test seed and step counts."""
        seeds = np.full((9, 32, 32, 3), 0.5)
        with self.assertRaises(ArgumentError):
            compose_counterfactual_grid(self.model, seeds)
        with self.assertRaises(ArgumentError):
            seeds = np.full((10, 32, 32, 3), 0.5)
            compose_counterfactual_grid(self.model, seeds, steps=4)


class TestBlockzooConcepts(TestBlockzooCommonBase):
    """Test concept factorization, selection and display."""

    def test_rank_one(self):
        """Test an exact rank-1 matrix."""
        rng = self._rng(1)
        u, v = rng.normal(size=40), rng.normal(size=6)
        activations = np.outer(u, v).reshape(10, 2, 2, 6)
        concepts = factorize_activations(activations, k=1)
        cosine = concepts.components[0] @ v / np.linalg.norm(v)
        self.assertGreater(abs(cosine), 0.999)
        residual = reconstruction_error(activations, concepts)
        self.assertAlmostEqual(residual, 0.0, places=6)

    def test_svd_oracle(self):
        """Test the truncated residual against a dense decomposition."""
        rng = self._rng(2)
        left, _ = np.linalg.qr(rng.normal(size=(200, 32)))
        right, _ = np.linalg.qr(rng.normal(size=(32, 32)))
        spectrum = 10.0 * 0.7 ** np.arange(32)
        matrix = left @ np.diag(spectrum) @ right.T
        activations = matrix.reshape(200, 1, 1, 32)
        concepts = factorize_activations(activations, k=10)
        singular = np.linalg.svd(matrix, compute_uv=False)
        np.testing.assert_allclose(concepts.singular_values, singular[:10], atol=1e-6)
        self.assertAlmostEqual(
            reconstruction_error(activations, concepts),
            float(np.sqrt(np.sum(singular[10:] ** 2))),
            delta=1e-6,
        )
        self.assertEqual(concepts.maps.shape, (200, 1, 1, 10))
        peaks = np.abs(concepts.components).argmax(axis=1)
        self.assertTrue(np.all(concepts.components[np.arange(10), peaks] > 0))

    def test_error_decreases_with_k(self):
        """Test the residual does not grow with the rank."""
        activations = self._rng(3).normal(size=(20, 3, 3, 8))
        errors = [
            reconstruction_error(activations, factorize_activations(activations, k=k))
            for k in range(1, 9)
        ]
        self.assertTrue(np.all(np.diff(errors) <= 1e-9))
        self.assertAlmostEqual(errors[-1], 0.0, places=6)

    def test_factorize_errors(self):
        """Test ranks that do not fit the activations."""
        activations = np.zeros((4, 2, 2, 3))
        with self.assertRaises(ArgumentError):
            factorize_activations(activations, k=4)
        with self.assertRaises(ArgumentError):
            factorize_activations(activations, k=0)
        with self.assertRaises(ArgumentError):
            factorize_activations(np.zeros((2, 2, 2, 3)), k=3)

    def test_select_by_correlation(self):
        """Test the threshold and strongest first order."""
        r = [0.5, 0.1, 0.3, 0.25, 0.05, -0.4]
        self.assertEqual(select_by_correlation(r, 0.2, 5), [0, 5, 2, 3])
        self.assertEqual(select_by_correlation(r, 0.2, 2), [0, 5])
        self.assertEqual(select_by_correlation(r, 0.9, 5), [])

    def test_select_concepts(self):
        """Test a component equal to the logit is selected first."""
        rng = self._rng(4)
        logits = rng.normal(size=30)
        maps = rng.normal(size=(30, 1, 1, 3)) * 0.01
        maps[:, 0, 0, 1] = logits
        concepts = ConceptSet(np.eye(3), np.ones(3), maps)
        selected = select_concepts(concepts, logits, threshold=0.2, top=5)
        self.assertAlmostEqual(selected.correlations[1], 1.0)
        self.assertEqual(selected.selected[0], 1)
        self.assertEqual(concepts.selected, [])
        with self.assertRaises(ArgumentError):
            select_concepts(concepts, logits[:10])

    def test_highlight(self):
        """Test dimming outside the strongest region."""
        image = np.ones((8, 8, 3))
        concept_map = np.array([[0.0, 0.0], [0.0, 1.0]])
        overlay, uniform = highlight(image, concept_map)
        self.assertFalse(uniform)
        self.assertEqual(overlay[7, 7, 0], 1.0)
        self.assertAlmostEqual(overlay[0, 0, 0], 0.4)
        again, _ = highlight(image, concept_map)
        np.testing.assert_array_equal(overlay, again)
        overlay, uniform = highlight(image, np.full((2, 2), 3.0))
        self.assertTrue(uniform)
        np.testing.assert_array_equal(overlay, image)

    def test_concept_grid(self):
        """Test five concepts fill 10 rows and uniform maps are flagged."""
        rng = self._rng(5)
        maps = rng.normal(size=(12, 2, 2, 5))
        maps[..., 0] = np.arange(12.0)[:, None, None]
        concepts = ConceptSet(
            np.eye(5),
            np.ones(5),
            maps,
            correlations=np.full(5, 0.5),
            selected=[0, 1, 2, 3, 4],
        )
        images = rng.uniform(0.0, 1.0, (12, 8, 8, 3))
        layout, image = compose_concept_grid(concepts, images)
        self.assertEqual(layout.rows, 10)
        self.assertEqual(len(layout.cells), 50)
        width = ROW_LABEL_WIDTH + 5 * CELL_SIZE
        self.assertEqual(image.size, (width, HEADER_HEIGHT + 10 * CELL_SIZE))
        self.assertEqual(layout.row_labels[:2], ["concept 0 +", "concept 0 -"])
        ids = [c.sample_id for c in layout.cells]
        self.assertEqual(ids[:5], ["11", "10", "9", "8", "7"])
        self.assertEqual(ids[5:10], ["0", "1", "2", "3", "4"])
        degenerate = layout.metadata["degenerate_maps"]
        self.assertEqual(len(degenerate), 10)
        self.assertTrue(all(d["concept"] == 0 for d in degenerate))

    def test_empty_selection(self):
        """Test a grid without selected concepts."""
        concepts = ConceptSet(np.eye(2), np.ones(2), np.zeros((5, 1, 1, 2)))
        with self.assertRaises(EmptyExplanationError):
            compose_concept_grid(concepts, np.zeros((5, 4, 4, 3)))


class TestBlockzooGridOutput(TestBlockzooCommonBase):
    """Test grid files and the handout."""

    def setUp(self):
        """Set up."""
        super().setUp()
        self.layout = baseline_layout(
            np.arange(60.0), [f"s{i:03d}" for i in range(60)], self._rng()
        )
        self.image = Image.new("RGB", (40, 30), "white")

    def test_save_grid(self):
        """Test the PNG and its layout sidecar."""
        path = self.tmp_dir / "grids" / "b.png"
        png, sidecar = save_grid(self.layout, self.image, path)
        self.assertEqual(sidecar.name, "b.json")
        with Image.open(png) as image:
            self.assertEqual(image.size, (40, 30))
        loaded = GridLayout.from_dict(json.loads(sidecar.read_text(encoding="utf-8")))
        self.assertEqual(loaded, self.layout)

    def test_export_handout(self):
        """Test one PDF page per grid."""
        png = io.BytesIO()
        self.image.save(png, format="PNG")
        path, _ = save_grid(self.layout, self.image, self.tmp_dir / "handout" / "b.png")
        pdf_bytes = export_handout([png.getvalue(), path])
        self.assertTrue(pdf_bytes.startswith(b"%PDF"))
        pdf = PdfDocument(pdf_bytes)
        self.assertEqual(len(pdf), 2)
        self.assertEqual(tuple(round(x) for x in pdf[0].get_size()), (40, 30))
        with self.assertRaises(ArgumentError):
            export_handout([])

    def test_layout_dict(self):
        """Test the layout document keys."""
        document = dataclasses.asdict(self.layout)
        self.assertEqual(document["technique"], "baseline")
        self.assertEqual(len(document["cells"]), 50)


if __name__ == "__main__":
    unittest.main()
