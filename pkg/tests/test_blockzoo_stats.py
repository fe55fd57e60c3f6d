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
import io
import unittest

# 2. Known third party imports:
import numpy as np
import pandas as pd

# 3. Local imports in the relative form:
from blockzoo.errors import ArgumentError, DegenerateSampleError, IngestionError
from blockzoo.stats import (
    ANSWER_COLUMNS,
    accuracy_report,
    annotator_agreement,
    attribute_comparison,
    bonferroni,
    cohens_kappa,
    compare_conditions,
    holm_bonferroni,
    kruskal_wallis,
    load_responses,
    mcnemar_exact,
    paired_attribute_tests,
    report_to_text,
    responses_from_frame,
    shapiro_wilk,
    wilcoxon_rank_sum,
)

from .test_blockzoo_common import TestBlockzooCommonBase

HEADER = "participant_id,condition,legs,color,background,shape,posture,included"
KEY = (1, 1, 0, 1, 0)


def _row(pid: str, condition: str, answers=KEY, included: int = 1) -> str:
    return ",".join([pid, condition, *(str(a) for a in answers), str(included)])


def _csv(rows) -> io.StringIO:
    return io.StringIO("\n".join([HEADER, *rows]) + "\n")


def _inn_fixture() -> io.StringIO:
    """80 collected INN responses whose 62 included rows match the published row."""
    # Correct answers per attribute out of 62.
    correct = {"legs": 62, "color": 51, "background": 49, "shape": 56, "posture": 44}
    rows = []
    for i in range(62):
        answers = []
        for attribute, relevant in zip(ANSWER_COLUMNS, KEY):
            right = i < correct[attribute]
            answers.append(relevant if right else 1 - relevant)
        rows.append(_row(f"p{i:03d}", "INN", answers))
    rows += [_row(f"x{i:03d}", "INN", included=0) for i in range(18)]
    return _csv(rows)


class TestBlockzooStatsTests(TestBlockzooCommonBase):
    """Test the statistical tests."""

    def test_mcnemar(self):
        """Test exact McNemar p-values."""
        self.assertEqual(mcnemar_exact(0, 0).p_value, 1.0)
        self.assertAlmostEqual(mcnemar_exact(5, 0).p_value, 0.0625)
        self.assertEqual(mcnemar_exact(10, 10).p_value, 1.0)
        self.assertEqual(mcnemar_exact(7, 2).p_value, mcnemar_exact(2, 7).p_value)
        self.assertEqual(mcnemar_exact(7, 2).n, 9)
        with self.assertRaises(ArgumentError):
            mcnemar_exact(-1, 2)

    def test_shapiro(self):
        """Test Shapiro-Wilk on small and skewed samples."""
        self.assertAlmostEqual(shapiro_wilk([1, 2, 3]).statistic, 1.0, delta=1e-6)
        skewed = self._rng(3).uniform(0.0, 1.0, 50) ** 3
        self.assertLess(shapiro_wilk(skewed).p_value, 0.01)
        normal = [
            shapiro_wilk(self._rng(s).normal(size=50)).p_value for s in range(100)
        ]
        self.assertGreaterEqual(np.mean(np.array(normal) > 0.01), 0.95)
        with self.assertRaises(DegenerateSampleError):
            shapiro_wilk([2, 2, 2])
        with self.assertRaises(ArgumentError):
            shapiro_wilk([1, 2])

    def test_kruskal(self):
        """Test Kruskal-Wallis values and rank invariance."""
        groups = [[1, 2], [3, 4], [5, 6]]
        result = kruskal_wallis(groups)
        self.assertAlmostEqual(result.statistic, 32.0 / 7.0)
        self.assertEqual(result.n, 6)
        cubed = kruskal_wallis([np.power(g, 3.0) for g in groups])
        self.assertAlmostEqual(cubed.statistic, result.statistic)
        identical = kruskal_wallis([[1, 2, 3], [1, 2, 3]])
        self.assertAlmostEqual(identical.statistic, 0.0)
        self.assertAlmostEqual(identical.p_value, 1.0)
        constant = kruskal_wallis([[1, 1], [1]])
        self.assertEqual((constant.statistic, constant.p_value), (0.0, 1.0))
        with self.assertRaises(ArgumentError):
            kruskal_wallis([[1, 2]])
        with self.assertRaises(ArgumentError):
            kruskal_wallis([[1, 2], []])

    def test_wilcoxon(self):
        """Test exact and approximate rank-sum tests."""
        result = wilcoxon_rank_sum([1, 2, 3], [4, 5, 6])
        self.assertEqual(result.statistic, 0.0)
        self.assertAlmostEqual(result.p_value, 0.1)
        self.assertGreater(result.effect_size, 0.0)
        same = wilcoxon_rank_sum([1, 2, 3], [1, 2, 3])
        self.assertAlmostEqual(same.p_value, 1.0)
        self.assertAlmostEqual(same.effect_size, 0.0)
        rng = self._rng(4)
        a, b = rng.normal(size=30), rng.normal(0.5, 1.0, size=40)
        first = wilcoxon_rank_sum(a, b)
        second = wilcoxon_rank_sum(np.exp(a), np.exp(b))
        self.assertAlmostEqual(first.p_value, second.p_value)
        self.assertEqual(first.n, 70)
        with self.assertRaises(ArgumentError):
            wilcoxon_rank_sum([], [1])

    def test_holm(self):
        """Test Holm adjusted p-values."""
        np.testing.assert_allclose(
            holm_bonferroni([0.01, 0.04, 0.03]), [0.03, 0.06, 0.06]
        )
        self.assertEqual(holm_bonferroni([0.2]), [0.2])
        self.assertEqual(holm_bonferroni([1.0, 1.0]), [1.0, 1.0])
        self.assertEqual(holm_bonferroni([]), [])
        pvals = [0.002, 0.3, 0.01, 0.04]
        adjusted = holm_bonferroni(pvals)
        self.assertTrue(np.all(np.array(adjusted) >= pvals))
        upper = np.array(bonferroni(pvals)) + 1e-12
        self.assertTrue(np.all(np.array(adjusted) <= upper))
        with self.assertRaises(ArgumentError):
            holm_bonferroni([0.5, 1.5])

    def test_bonferroni(self):
        """Test Bonferroni caps and family size."""
        self.assertEqual(bonferroni([0.2, 0.6]), [0.4, 1.0])
        self.assertEqual(bonferroni([0.01], m=3), [0.03])

    def test_kappa(self):
        """Test Cohen's kappa."""
        a = ["x"] * 50 + ["y"] * 50
        b = ["x"] * 45 + ["y"] * 5 + ["x"] * 5 + ["y"] * 45
        self.assertAlmostEqual(cohens_kappa(a, b).statistic, 0.8)
        self.assertAlmostEqual(cohens_kappa(b, a).statistic, 0.8)
        self.assertIsNone(cohens_kappa(a, b).p_value)
        self.assertAlmostEqual(cohens_kappa(a, a).statistic, 1.0)
        with self.assertRaises(ArgumentError):
            cohens_kappa(a, b[:10])
        with self.assertRaises(DegenerateSampleError):
            cohens_kappa(["x", "x"], ["x", "x"])
        rng = self._rng(5)
        independent = cohens_kappa(rng.integers(0, 2, 4000), rng.integers(0, 2, 4000))
        self.assertLess(abs(independent.statistic), 0.05)

    def test_annotator_agreement(self):
        """Test kappa on one label against the rest."""
        a = ["include", "exclude", "unsure", "include"]
        b = ["include", "unsure", "exclude", "include"]
        self.assertAlmostEqual(annotator_agreement(a, b).statistic, 1.0)


class TestBlockzooResponses(TestBlockzooCommonBase):
    """Test response ingestion and the accuracy report."""

    def test_key_and_relevant(self):
        """Test a key answer and an all relevant answer."""
        responses = load_responses(
            _csv([_row("a", "BASE"), _row("b", "CON", (1, 1, 1, 1, 1))])
        )
        report = accuracy_report(responses)
        self.assertAlmostEqual(report.loc["BASE", "overall"], 100.0)
        self.assertAlmostEqual(report.loc["CON", "overall"], 60.0)
        self.assertNotIn("INN", report.index)
        self.assertEqual(list(responses.accuracy()), [1.0, 0.6])

    def test_inn_row(self):
        """Test the aggregation reproduces a published accuracy row."""
        report = accuracy_report(load_responses(_inn_fixture()))
        row = report.loc["INN"]
        self.assertEqual(row["N_collected"], 80)
        self.assertEqual(row["N_filtered"], 62)
        expected = {
            "overall": 84.5,
            "legs": 100.0,
            "color": 82.3,
            "background": 79.0,
            "shape": 90.3,
            "posture": 71.0,
        }
        for column, value in expected.items():
            self.assertAlmostEqual(row[column], value, delta=0.05)
        text = report_to_text(report)
        self.assertIn("84.5", text)
        self.assertIn("82.3", text)

    def test_exclusions(self):
        """Test missing answers, duplicate ids and the inclusion flag."""
        rows = [
            _row("a", "BASE"),
            _row("b", "BASE"),
            "c,INN,1,,0,1,0,1",
            _row("d", "INN"),
            _row("d", "CON"),
            _row("e", "CON", included=0),
        ]
        responses = load_responses(_csv(rows))
        self.assertEqual(list(responses.frame["participant_id"]), ["a", "b"])
        self.assertEqual(
            responses.exclusions,
            {"missing_answer": 1, "duplicate_participant": 2, "not_included": 1},
        )
        self.assertEqual(responses.collected, {"BASE": 2, "INN": 2, "CON": 2})
        self.assertEqual(responses.frame["legs"].dtype, bool)

    def test_ingestion_errors(self):
        """Test malformed response files."""
        with self.assertRaises(IngestionError) as e:
            load_responses(_csv([_row("a", "BASE"), _row("b", "SALIENCY")]))
        self.assertEqual(e.exception.row, 2)
        with self.assertRaises(IngestionError) as e:
            load_responses(_csv(["a,BASE,1,2,0,1,0,1"]))
        self.assertEqual(e.exception.row, 1)
        self.assertIsInstance(e.exception.__cause__, ValueError)
        with self.assertRaises(IngestionError):
            responses_from_frame(pd.DataFrame({"participant_id": ["a"]}))
        with self.assertRaises(IngestionError):
            load_responses(io.StringIO(""))

    def test_file(self):
        """Test reading responses from a path."""
        path = self.tmp_dir / "responses.csv"
        path.write_text(_csv([_row("a", "INN")]).getvalue(), encoding="utf-8")
        self.assertEqual(len(load_responses(path).frame), 1)


class TestBlockzooStudyAnalyses(TestBlockzooCommonBase):
    """Test the study level analyses."""

    @classmethod
    def setUpClass(cls):
        """Set up class."""
        super().setUpClass()
        rng = np.random.default_rng(6)
        rows = []
        for condition, p_correct in (("BASE", 0.6), ("INN", 0.85), ("CON", 0.4)):
            for i in range(30):
                right = rng.uniform(size=5) < p_correct
                answers = [k if r else 1 - k for k, r in zip(KEY, right)]
                rows.append(_row(f"{condition}{i:02d}", condition, answers))
        cls.responses = load_responses(_csv(rows))

    def test_paired_attribute_tests(self):
        """Test McNemar tests of legs against other attributes."""
        results = paired_attribute_tests(self.responses, condition="INN")
        self.assertEqual(set(results), {"color", "background"})
        for result in results.values():
            self.assertTrue(0.0 <= result.p_value <= 1.0)
            self.assertLessEqual(result.n, 30)

    def test_compare_conditions(self):
        """Test normality, Kruskal-Wallis and adjusted pairwise tests."""
        comparison = compare_conditions(self.responses)
        self.assertEqual(set(comparison["normality"]), {"BASE", "INN", "CON"})
        self.assertEqual(comparison["kruskal"].n, 90)
        self.assertEqual(set(comparison["pairwise"]), {"BASE vs INN", "BASE vs CON"})
        for result in comparison["pairwise"].values():
            self.assertAlmostEqual(result.p_adjusted, min(1.0, 2.0 * result.p_value))
            self.assertEqual(result.n, 60)

    def test_attribute_comparison(self):
        """Test Holm adjusted per-attribute comparisons."""
        results = attribute_comparison(
            self.responses, "INN", "BASE", extra_pvalues=[0.5]
        )
        self.assertEqual(list(results), list(ANSWER_COLUMNS))
        raw = [r.p_value for r in results.values()] + [0.5]
        adjusted = holm_bonferroni(raw)
        for result, p in zip(results.values(), adjusted):
            self.assertAlmostEqual(result.p_adjusted, p)
        self.assertEqual(results["legs"].to_dict()["name"], "wilcoxon_rank_sum")


if __name__ == "__main__":
    unittest.main()
