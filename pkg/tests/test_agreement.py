from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from osmeter.agreement import (
    AgreementError,
    LabelMatrix,
    agreement,
    agreement_rows,
    band,
    cohen_kappa,
    fleiss_kappa,
    matrices_from_labels,
    percentage_agreement,
    prevalence,
)


def lm(**cols):
    return LabelMatrix.from_columns({k: [bool(v) for v in vals] for k, vals in cols.items()})


def test_percentage_agreement():
    same = lm(a=[1, 0, 1], b=[1, 0, 1], c=[1, 0, 1])
    overall, pairs = percentage_agreement(same)
    assert overall == 1.0 and set(pairs.values()) == {1.0}
    _, pairs = percentage_agreement(lm(a=[1, 1, 0, 0], b=[1, 0, 1, 0]))
    assert pairs[("a", "b")] == 0.5


def test_cohen_hand_cases():
    assert cohen_kappa([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0
    assert cohen_kappa([1, 1, 0, 0], [1, 0, 1, 0]) == 0.0
    with pytest.raises(AgreementError):
        cohen_kappa([1, 0], [1])
    with pytest.raises(AgreementError):
        cohen_kappa([], [])


def test_cohen_degenerate_convention():
    assert cohen_kappa([1, 1, 1], [1, 1, 1]) == 1.0


def test_fleiss_hand_cases():
    assert fleiss_kappa(np.array([[1, 1, 1], [0, 0, 0]], bool)) == 1.0
    grid = np.array([[1, 1, 1], [0, 0, 0], [1, 1, 0], [1, 0, 0]], bool)
    assert fleiss_kappa(grid) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(AgreementError):
        fleiss_kappa(np.ones((3, 1), bool))


def test_prevalence():
    p = prevalence(lm(a=[1, 1, 1, 1], b=[1, 0, 0, 0]))
    assert p == {"a": 1.0, "b": 0.25}


@pytest.mark.parametrize("kappa,label", [
    (0.8388, "Almost Perfect"), (0.5224, "Moderate"), (0.3994, "Fair"), (0.45, "Moderate"),
    (0.40, "Fair"), (0.41, "Moderate"), (0.20, "Slight or worse"), (-0.3, "Slight or worse"),
    (0.80, "Substantial"), (0.80004, "Substantial"), (1.0, "Almost Perfect"),
])
def test_bands(kappa, label):
    assert band(kappa) == label


@given(st.integers(0, 2**32 - 1))
def test_kappa_bounds(seed):
    rng = np.random.default_rng(seed)
    grid = rng.random((int(rng.integers(2, 30)), int(rng.integers(2, 6)))) < 0.5
    res = agreement(LabelMatrix.from_columns({f"r{i}": grid[:, i] for i in range(grid.shape[1])}))
    assert res.fleiss_kappa <= 1.0 + 1e-12
    assert all(-1.0 - 1e-12 <= k <= 1.0 + 1e-12 for k in res.cohen_kappa.values())
    assert 0.0 <= res.pa_overall <= min(res.pa_pairwise.values()) + 1e-12


def test_independent_raters_near_zero():
    rng = np.random.default_rng(42)
    a, b = rng.random(1000) < 0.5, rng.random(1000) < 0.5
    assert abs(cohen_kappa(a, b)) < 0.1


def test_imbalanced_prevalence_high_pa_low_kappa():
    a = [True] + [False] * 99
    b = [False] * 99 + [True]
    pa = percentage_agreement(LabelMatrix.from_columns({"a": a, "b": b}))[0]
    assert pa == 0.98
    assert cohen_kappa(a, b) < 0


def test_matrices_from_labels_and_rows():
    rows = [
        {"doi": "d1", "rater_id": "R1", "feature": "f", "value": "true"},
        {"doi": "d1", "rater_id": "R2", "feature": "f", "value": "false"},
        {"doi": "d2", "rater_id": "R1", "feature": "f", "value": "true"},
        {"doi": "d2", "rater_id": "R2", "feature": "f", "value": "true"},
        {"doi": "d3", "rater_id": "R1", "feature": "f", "value": "true"},
        {"doi": "d3", "rater_id": "R2", "feature": "f", "value": ""},
    ]
    m = matrices_from_labels(rows)["f"]
    assert m.items == ("d1", "d2") and m.raters == ("R1", "R2")
    (row,) = agreement_rows({"f": m})
    assert row["n_items"] == 2 and row["pa_R1_R2"] == 0.5 and row["prev_R2"] == 0.5
    assert row["band"] == band(row["fleiss_kappa"])


def test_label_matrix_validation():
    with pytest.raises(AgreementError):
        LabelMatrix(("a",), ("r1",), np.array([[True]]))
    with pytest.raises(AgreementError):
        LabelMatrix((), ("r1", "r2"), np.zeros((0, 2), bool))
    with pytest.raises(AgreementError):
        LabelMatrix(("a", "a"), ("r1", "r2"), np.zeros((2, 2), bool))


@given(st.integers(0, 2**32 - 1))
def test_symmetry_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    n, r = int(rng.integers(3, 25)), int(rng.integers(2, 5))
    grid = rng.random((n, r)) < rng.uniform(0.2, 0.8)
    assert cohen_kappa(grid[:, 0], grid[:, 1]) == pytest.approx(cohen_kappa(grid[:, 1], grid[:, 0]), abs=1e-12)
    shuffled = grid[rng.permutation(n)][:, rng.permutation(r)]
    assert fleiss_kappa(shuffled) == pytest.approx(fleiss_kappa(grid), abs=1e-12)


def test_kappa_one_iff_identical():
    a = np.array([1, 0, 1, 1, 0], bool)
    grid = np.column_stack([a, a, a])
    assert fleiss_kappa(grid) == 1.0 and cohen_kappa(a, a) == 1.0
    grid[0, 2] = ~grid[0, 2]
    assert fleiss_kappa(grid) < 1.0 and cohen_kappa(grid[:, 0], grid[:, 2]) < 1.0
