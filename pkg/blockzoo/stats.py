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
Statistical battery of the explanation user studies.

The tests wrap ``scipy.stats`` and ``statsmodels`` and return ``TestResult``
records; the response helpers read study CSV files into ``StudyResponses`` and
build the accuracy table per condition and attribute.
"""

# 1. Standard library imports:
import dataclasses
import logging
import math
import os
from typing import Any, Dict, IO, List, Optional, Sequence, Union

# 2. Known third party imports:
import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.stats.contingency_tables import mcnemar
from statsmodels.stats.inter_rater import cohens_kappa as _statsmodels_kappa
from statsmodels.stats.multitest import multipletests

# 3. Local imports in the relative form:
from .errors import ArgumentError, DegenerateSampleError, IngestionError

logger = logging.getLogger(__name__)

ANSWER_COLUMNS = ("legs", "color", "background", "shape", "posture")
RELEVANT = frozenset(("legs", "color", "shape"))
CONDITIONS = ("BASE", "INN", "CON")
RESPONSE_COLUMNS = ("participant_id", "condition", *ANSWER_COLUMNS, "included")
EXACT_RANK_SUM_LIMIT = 12


@dataclasses.dataclass
class TestResult:
    """Outcome of one statistical test."""

    __test__ = False

    name: str
    statistic: float
    p_value: Optional[float]
    n: int
    effect_size: Optional[float] = None
    p_adjusted: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


# Tests ################################################################################


def mcnemar_exact(b: int, c: int) -> TestResult:
    """
    Two-sided exact McNemar test on the discordant counts of a paired 2x2 table.

    :raises ArgumentError: On negative counts.
    """
    if b < 0 or c < 0:
        raise ArgumentError(
            f"Discordant counts must be non-negative. {b}, {c} were given."
        )
    if b + c == 0:
        return TestResult("mcnemar", 0.0, 1.0, 0)
    result = mcnemar([[0, b], [c, 0]], exact=True)
    p = float(min(1.0, result.pvalue))
    return TestResult("mcnemar", float(result.statistic), p, b + c)


def shapiro_wilk(samples: Sequence[float]) -> TestResult:
    """
    Shapiro-Wilk normality test (Royston's approximation).

    :raises ArgumentError: For fewer than 3 or more than 5000 values.
    :raises DegenerateSampleError: If every value is equal.
    """
    x = np.asarray(samples, dtype=np.float64)
    if not 3 <= len(x) <= 5000:
        raise ArgumentError(
            f"Shapiro-Wilk needs 3 to 5000 values. {len(x)} were given."
        )
    if np.ptp(x) == 0:
        raise DegenerateSampleError("Shapiro-Wilk is undefined for a constant sample.")
    w, p = stats.shapiro(x)
    return TestResult("shapiro_wilk", float(w), float(p), len(x))


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> TestResult:
    """
    Kruskal-Wallis H test with tie correction.

    All values being identical gives ``H = 0`` and ``p = 1``.

    :raises ArgumentError: For fewer than 2 groups or an empty group.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(len(g) == 0 for g in groups):
        raise ArgumentError("Kruskal-Wallis needs at least 2 non-empty groups.")
    n = sum(len(g) for g in groups)
    if np.ptp(np.concatenate(groups)) == 0:
        return TestResult("kruskal_wallis", 0.0, 1.0, n)
    h, p = stats.kruskal(*groups)
    return TestResult("kruskal_wallis", float(h), float(p), n)


def rank_sum_z(a: np.ndarray, b: np.ndarray) -> float:
    """Continuity and tie corrected normal score of the rank sum of ``a``."""
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    combined = np.concatenate([a, b])
    u = stats.rankdata(combined)[:n_a].sum() - n_a * (n_a + 1) / 2.0
    _, counts = np.unique(combined, return_counts=True)
    ties = float(np.sum(counts**3 - counts))
    variance = n_a * n_b / 12.0 * ((n + 1) - ties / (n * (n - 1)))
    if variance <= 0:
        return 0.0
    deviation = max(abs(u - n_a * n_b / 2.0) - 0.5, 0.0)
    return math.copysign(deviation / math.sqrt(variance), u - n_a * n_b / 2.0)


def wilcoxon_rank_sum(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """
    Wilcoxon rank-sum (Mann-Whitney U) test with effect size ``r = |Z| / sqrt(N)``.

    The p-value is exact for at most 12 values without ties and otherwise uses the
    tie corrected normal approximation with continuity correction. The statistic is
    ``U`` of ``a``.

    :raises ArgumentError: If a sample is empty.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not len(a) or not len(b):
        raise ArgumentError("Rank-sum tests need two non-empty samples.")
    n = len(a) + len(b)
    combined = np.concatenate([a, b])
    z = rank_sum_z(a, b) if n > 1 else 0.0
    effect = abs(z) / math.sqrt(n)
    if np.ptp(combined) == 0:
        u = len(a) * len(b) / 2.0
        return TestResult("wilcoxon_rank_sum", u, 1.0, n, effect)
    tied = len(np.unique(combined)) < n
    method = "exact" if n <= EXACT_RANK_SUM_LIMIT and not tied else "asymptotic"
    result = stats.mannwhitneyu(a, b, alternative="two-sided", method=method)
    p = float(min(1.0, result.pvalue))
    return TestResult("wilcoxon_rank_sum", float(result.statistic), p, n, effect)


def _check_pvalues(pvals: Sequence[float]) -> np.ndarray:
    pvals = np.asarray(pvals, dtype=np.float64)
    if np.any(~np.isfinite(pvals)) or np.any((pvals < 0) | (pvals > 1)):
        raise ArgumentError(
            f"p-values must lie in [0, 1]. {pvals.tolist()} were given."
        )
    return pvals


def holm_bonferroni(pvals: Sequence[float]) -> List[float]:
    """
    Holm step-down adjusted p-values, in input order.

    :raises ArgumentError: If a p-value is outside ``[0, 1]``.
    """
    pvals = _check_pvalues(pvals)
    if not len(pvals):
        return []
    return [float(p) for p in multipletests(pvals, method="holm")[1]]


def bonferroni(pvals: Sequence[float], m: int = None) -> List[float]:
    """Bonferroni adjusted p-values ``min(1, m p)``, ``m`` defaulting to the count."""
    pvals = _check_pvalues(pvals)
    m = len(pvals) if m is None else m
    return [float(min(1.0, m * p)) for p in pvals]


def cohens_kappa(labels_a: Sequence[Any], labels_b: Sequence[Any]) -> TestResult:
    """
    Cohen's kappa of two raters over the union of their categories.

    :raises ArgumentError: On unequal or empty label lists.
    :raises DegenerateSampleError: If chance agreement is 1.
    """
    labels_a, labels_b = list(labels_a), list(labels_b)
    if len(labels_a) != len(labels_b) or not labels_a:
        raise ArgumentError("Kappa needs two equally long, non-empty label lists.")
    categories = sorted(set(labels_a) | set(labels_b), key=str)
    index = {c: i for i, c in enumerate(categories)}
    table = np.zeros((len(categories), len(categories)))
    for a, b in zip(labels_a, labels_b):
        table[index[a], index[b]] += 1
    n = table.sum()
    chance = float((table.sum(axis=1) / n) @ (table.sum(axis=0) / n))
    if chance >= 1.0:
        raise DegenerateSampleError("Kappa is undefined when chance agreement is 1.")
    kappa = float(_statsmodels_kappa(table, return_results=False))
    return TestResult("cohens_kappa", kappa, None, int(n))


# Responses ############################################################################


@dataclasses.dataclass
class StudyResponses:
    """
    Included study responses.

    ``frame`` holds one row per included participant with boolean answer columns
    (``True`` marks the attribute as relevant).
    """

    frame: pd.DataFrame
    collected: Dict[str, int]
    exclusions: Dict[str, int] = dataclasses.field(default_factory=dict)

    def condition(self, name: str) -> pd.DataFrame:
        return self.frame[self.frame["condition"] == name]

    def correctness(self) -> pd.DataFrame:
        """Per participant and attribute, whether the answer matches the key."""
        key = {a: a in RELEVANT for a in ANSWER_COLUMNS}
        correct = pd.DataFrame(
            {a: self.frame[a] == key[a] for a in ANSWER_COLUMNS}, index=self.frame.index
        )
        correct.insert(0, "condition", self.frame["condition"])
        correct.insert(0, "participant_id", self.frame["participant_id"])
        return correct

    def accuracy(self) -> pd.Series:
        """Per participant share of correct answers."""
        return self.correctness()[list(ANSWER_COLUMNS)].mean(axis=1)


def _as_flag(value) -> Optional[bool]:
    if pd.isna(value):
        return None
    text = str(value).strip().lower()
    if text in ("1", "true", "1.0"):
        return True
    if text in ("0", "false", "0.0"):
        return False
    raise ValueError(value)


def responses_from_frame(frame: pd.DataFrame) -> StudyResponses:
    """
    Validate raw responses and apply the automatic exclusions.

    Rows with a missing answer and every row of a participant id that occurs more
    than once are excluded, as are rows whose ``included`` flag is 0.

    :raises IngestionError: On missing columns, an unknown condition or a value \
    that is not 0/1 (with the one based data row).
    """
    missing = [c for c in RESPONSE_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestionError(f"Missing response columns: {', '.join(missing)}.")
    rows = []
    collected = {c: 0 for c in CONDITIONS}
    exclusions = {"missing_answer": 0, "duplicate_participant": 0, "not_included": 0}
    for number, (_, row) in enumerate(frame.iterrows(), start=1):
        condition = str(row["condition"]).strip()
        if condition not in CONDITIONS:
            raise IngestionError(f'Unknown condition "{condition}".', row=number)
        collected[condition] += 1
        try:
            answers = {a: _as_flag(row[a]) for a in ANSWER_COLUMNS}
            included = _as_flag(row["included"])
        except ValueError as e:
            raise IngestionError(
                f"Answers must be 0 or 1, {e} was given.", row=number
            ) from e
        rows.append(
            dict(
                participant_id=str(row["participant_id"]).strip(),
                condition=condition,
                included=included,
                **answers,
            )
        )
    table = pd.DataFrame(rows, columns=list(RESPONSE_COLUMNS))
    duplicated = table["participant_id"].duplicated(keep=False)
    incomplete = table[list(ANSWER_COLUMNS)].isna().any(axis=1)
    excluded_flag = table["included"] == False  # noqa: E712
    exclusions["duplicate_participant"] = int(duplicated.sum())
    exclusions["missing_answer"] = int((incomplete & ~duplicated).sum())
    exclusions["not_included"] = int((excluded_flag & ~duplicated & ~incomplete).sum())
    keep = table[~duplicated & ~incomplete & ~excluded_flag].copy()
    for a in ANSWER_COLUMNS:
        keep[a] = keep[a].astype(bool)
    keep = keep.drop(columns="included").reset_index(drop=True)
    if any(exclusions.values()):
        logger.info("excluded responses: %s", exclusions)
    return StudyResponses(keep, collected, exclusions)


def load_responses(source: Union[str, os.PathLike, IO]) -> StudyResponses:
    """
    Read a response CSV with header
    ``participant_id,condition,legs,color,background,shape,posture,included``.
    """
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestionError(f"Cannot parse response file: {e}") from e
    return responses_from_frame(frame)


def accuracy_report(responses: StudyResponses) -> pd.DataFrame:
    """
    Mean accuracy in percent per condition, overall and per attribute.

    Columns: ``N_collected``, ``N_filtered``, ``overall`` and one per attribute;
    conditions without included participants are left out.
    """
    correct = responses.correctness()
    records = []
    for condition in CONDITIONS:
        group = correct[correct["condition"] == condition]
        if group.empty:
            continue
        answers = group[list(ANSWER_COLUMNS)].astype(float)
        record = {
            "condition": condition,
            "N_collected": responses.collected.get(condition, 0),
            "N_filtered": len(group),
            "overall": 100.0 * answers.mean(axis=1).mean(),
        }
        record.update({a: 100.0 * answers[a].mean() for a in ANSWER_COLUMNS})
        records.append(record)
    columns = ["condition", "N_collected", "N_filtered", "overall", *ANSWER_COLUMNS]
    return pd.DataFrame(records, columns=columns).set_index("condition")


def report_to_text(report: pd.DataFrame) -> str:
    """Aligned text rendering of an accuracy report with one decimal."""
    return report.to_string(float_format=lambda v: f"{v:.1f}")


# Study analyses #######################################################################


def paired_attribute_tests(
    responses: StudyResponses,
    reference: str = "legs",
    others: Sequence[str] = ("color", "background"),
    condition: str = None,
) -> Dict[str, TestResult]:
    """
    Exact McNemar tests of participants' correctness on ``reference`` against each
    other attribute.

    :param condition: Restrict to one condition, defaults to all participants.
    """
    correct = responses.correctness()
    if condition is not None:
        correct = correct[correct["condition"] == condition]
    results = {}
    for other in others:
        b = int((correct[reference] & ~correct[other]).sum())
        c = int((~correct[reference] & correct[other]).sum())
        results[other] = mcnemar_exact(b, c)
    return results


def compare_conditions(
    responses: StudyResponses,
    baseline: str = "BASE",
    treatments: Sequence[str] = ("INN", "CON"),
) -> Dict[str, Any]:
    """
    Compare participant accuracy across conditions.

    Runs Shapiro-Wilk per condition, Kruskal-Wallis across all conditions and a
    rank-sum test of the baseline against each treatment, Bonferroni adjusted over
    the treatments.

    :returns: ``{"normality": {condition: TestResult | None}, "kruskal": TestResult,
        "pairwise": {"BASE vs INN": TestResult, ...}}``
    """
    accuracy = responses.accuracy()
    conditions = responses.frame["condition"]
    groups = {
        c: accuracy[conditions == c].to_numpy()
        for c in CONDITIONS
        if (conditions == c).any()
    }
    normality = {}
    for condition, values in groups.items():
        try:
            normality[condition] = shapiro_wilk(values)
        except (ArgumentError, DegenerateSampleError) as e:
            logger.warning("no normality test for %s: %s", condition, e)
            normality[condition] = None
    pairwise = {}
    for treatment in treatments:
        if baseline in groups and treatment in groups:
            pairwise[f"{baseline} vs {treatment}"] = wilcoxon_rank_sum(
                groups[baseline], groups[treatment]
            )
    adjusted = bonferroni([r.p_value for r in pairwise.values()], m=len(treatments))
    for result, p in zip(pairwise.values(), adjusted):
        result.p_adjusted = p
    return {
        "normality": normality,
        "kruskal": kruskal_wallis(list(groups.values())),
        "pairwise": pairwise,
    }


def attribute_comparison(
    responses: StudyResponses,
    a: str,
    b: str,
    attributes: Sequence[str] = ANSWER_COLUMNS,
    extra_pvalues: Sequence[float] = (),
) -> Dict[str, TestResult]:
    """
    Per-attribute rank-sum tests of correctness between two conditions.

    The p-values are Holm adjusted together with ``extra_pvalues``.
    """
    correct = responses.correctness()
    group_a = correct[correct["condition"] == a]
    group_b = correct[correct["condition"] == b]
    results = {
        attribute: wilcoxon_rank_sum(
            group_a[attribute].astype(float), group_b[attribute].astype(float)
        )
        for attribute in attributes
    }
    pvals = [r.p_value for r in results.values()] + list(extra_pvalues)
    adjusted = holm_bonferroni(pvals)
    for result, p in zip(results.values(), adjusted):
        result.p_adjusted = p
    return results


def annotator_agreement(
    labels_a: Sequence[str], labels_b: Sequence[str], positive: str = "include"
) -> TestResult:
    """Kappa of two annotators on ``positive`` against every other label."""
    return cohens_kappa(
        [x == positive for x in labels_a], [x == positive for x in labels_b]
    )
