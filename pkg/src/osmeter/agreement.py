"""Inter-rater agreement over boolean labels: PA, Cohen's and Fleiss's kappa, prevalence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

BANDS = (
    (0.20, "Slight or worse"),
    (0.40, "Fair"),
    (0.60, "Moderate"),
    (0.80, "Substantial"),
    (1.00, "Almost Perfect"),
)


class AgreementError(ValueError):
    pass


@dataclass(frozen=True)
class LabelMatrix:
    items: tuple[str, ...]
    raters: tuple[str, ...]
    labels: np.ndarray  # items x raters, bool

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=bool)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "raters", tuple(self.raters))
        if labels.ndim != 2 or labels.shape != (len(self.items), len(self.raters)):
            raise AgreementError("labels must be an items x raters grid")
        if len(self.raters) < 2:
            raise AgreementError("at least two raters are required")
        if len(self.items) < 1:
            raise AgreementError("at least one item is required")
        if len(set(self.items)) != len(self.items):
            raise AgreementError("item ids must be unique")

    @classmethod
    def from_columns(cls, columns: dict[str, Sequence[bool]], items: Sequence[str] | None = None):
        raters = list(columns)
        grid = np.column_stack([np.asarray(columns[r], dtype=bool) for r in raters])
        if items is None:
            items = [str(i) for i in range(grid.shape[0])]
        return cls(tuple(items), tuple(raters), grid)

    def column(self, rater: str) -> np.ndarray:
        return self.labels[:, self.raters.index(rater)]


@dataclass
class AgreementResult:
    pa_overall: float
    pa_pairwise: dict[tuple[str, str], float]
    cohen_kappa: dict[tuple[str, str], float]
    fleiss_kappa: float
    prevalence: dict[str, float]
    band: str
    degenerate: list[str] = field(default_factory=list)


def percentage_agreement(m: LabelMatrix) -> tuple[float, dict[tuple[str, str], float]]:
    """Share of items where every rater agrees, plus the share for each rater pair."""
    labels = m.labels
    overall = float(np.mean(np.all(labels == labels[:, :1], axis=1)))
    pairwise = {
        (m.raters[i], m.raters[j]): float(np.mean(labels[:, i] == labels[:, j]))
        for i, j in combinations(range(len(m.raters)), 2)
    }
    return overall, pairwise


def _cohen(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    p_o = float(np.mean(a == b))
    pa1, pb1 = float(np.mean(a)), float(np.mean(b))
    p_e = pa1 * pb1 + (1.0 - pa1) * (1.0 - pb1)
    if p_e == 1.0:
        return (1.0 if np.array_equal(a, b) else 0.0), True
    return (p_o - p_e) / (1.0 - p_e), False


def cohen_kappa(a: Sequence[bool], b: Sequence[bool]) -> float:
    """Cohen's kappa for two boolean label columns.

    When chance agreement is exactly 1 (both raters constant) the value is
    1.0 for identical columns and 0.0 otherwise; a warning is logged.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape or a.ndim != 1:
        raise AgreementError("label columns must be 1-D and of equal length")
    if a.size == 0:
        raise AgreementError("label columns are empty")
    kappa, degenerate = _cohen(a, b)
    if degenerate:
        log.warning("cohen_kappa: chance agreement is 1, returning %.1f by convention", kappa)
    return kappa


def _fleiss(labels: np.ndarray) -> tuple[float, bool]:
    n_items, n = labels.shape
    true_counts = labels.sum(axis=1).astype(float)
    counts = np.column_stack([true_counts, n - true_counts])
    p_i = (counts * (counts - 1)).sum(axis=1) / (n * (n - 1))
    p_bar = float(p_i.mean())
    p_j = counts.sum(axis=0) / (n_items * n)
    p_e = float((p_j ** 2).sum())
    if p_e == 1.0:
        return (1.0 if p_bar == 1.0 else 0.0), True
    return (p_bar - p_e) / (1.0 - p_e), False


def fleiss_kappa(m: LabelMatrix | np.ndarray) -> float:
    """Fleiss's kappa over a two-category (true/false) label grid."""
    labels = m.labels if isinstance(m, LabelMatrix) else np.asarray(m, dtype=bool)
    if labels.ndim != 2 or labels.shape[0] < 1:
        raise AgreementError("need an items x raters grid with at least one item")
    if labels.shape[1] < 2:
        raise AgreementError("Fleiss's kappa needs at least two raters")
    kappa, degenerate = _fleiss(labels)
    if degenerate:
        log.warning("fleiss_kappa: chance agreement is 1, returning %.1f by convention", kappa)
    return kappa


def prevalence(m: LabelMatrix) -> dict[str, float]:
    return {r: float(np.mean(m.labels[:, i])) for i, r in enumerate(m.raters)}


def band(kappa: float) -> str:
    """Landis and Koch label; each band includes its printed upper edge.

    The value is rounded to 4 decimals first, the precision agreement tables report.
    """
    value = round(float(kappa), 4)
    for upper, label in BANDS:
        if value <= upper:
            return label
    return BANDS[-1][1]


def agreement(m: LabelMatrix) -> AgreementResult:
    pa_all, pa_pairs = percentage_agreement(m)
    kappas: dict[tuple[str, str], float] = {}
    degenerate: list[str] = []
    for i, j in combinations(range(len(m.raters)), 2):
        pair = (m.raters[i], m.raters[j])
        kappas[pair], flag = _cohen(m.labels[:, i], m.labels[:, j])
        if flag:
            degenerate.append(f"cohen:{pair[0]}-{pair[1]}")
    fk, flag = _fleiss(m.labels)
    if flag:
        degenerate.append("fleiss")
    return AgreementResult(
        pa_overall=pa_all,
        pa_pairwise=pa_pairs,
        cohen_kappa=kappas,
        fleiss_kappa=fk,
        prevalence=prevalence(m),
        band=band(fk),
        degenerate=degenerate,
    )


def matrices_from_labels(rows: Sequence[dict], raters: Sequence[str] | None = None) -> dict[str, LabelMatrix]:
    """Group long-format label rows (doi, rater_id, feature, value) into one matrix per feature.

    Items lacking a boolean label from any rater are dropped for that feature.
    """
    from osmeter.ingest import coerce_bool

    grid: dict[str, dict[str, dict[str, bool | None]]] = {}
    all_raters: list[str] = []
    for row in rows:
        rater = str(row["rater_id"])
        if rater not in all_raters:
            all_raters.append(rater)
        grid.setdefault(row["feature"], {}).setdefault(row["doi"], {})[rater] = coerce_bool(row["value"])
    raters = list(raters) if raters else all_raters
    out = {}
    for feature in sorted(grid):
        items, rows_ = [], []
        for doi in sorted(grid[feature]):
            labels = grid[feature][doi]
            values = [labels.get(r) for r in raters]
            if any(v is None for v in values):
                continue
            items.append(doi)
            rows_.append(values)
        if items:
            out[feature] = LabelMatrix(tuple(items), tuple(raters), np.array(rows_, dtype=bool))
    return out


def agreement_rows(matrices: dict[str, LabelMatrix]) -> list[dict]:
    """One row per feature with PA, pairwise kappas, Fleiss kappa, band and prevalences."""
    rows = []
    for feature, m in sorted(matrices.items()):
        res = agreement(m)
        row: dict = {"feature": feature, "n_items": len(m.items), "pa_all": res.pa_overall}
        for (a, b), v in res.pa_pairwise.items():
            row[f"pa_{a}_{b}"] = v
        for (a, b), v in res.cohen_kappa.items():
            row[f"cohen_{a}_{b}"] = v
        row["fleiss_kappa"] = res.fleiss_kappa
        row["band"] = res.band
        for r, v in res.prevalence.items():
            row[f"prev_{r}"] = v
        row["degenerate"] = ";".join(res.degenerate)
        rows.append(row)
    return rows
