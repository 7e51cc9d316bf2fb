"""Design tensors for logit models with parameter sharing across utilities."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import pandas as pd

from osmeter.choice.spec import ModelSpec, SpecError, Term

ASC = "ASC"


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class Design:
    """Everything an estimator needs.

    ``X`` holds one column per encoded variable. ``Z`` has shape (J, N, P):
    ``Z[j, n, p]`` is the value multiplying parameter ``p`` in the utility of
    alternative ``j`` for observation ``n``. The reference alternative's slice
    is all zeros. Shared parameters sum the columns they stand for.
    """

    X: np.ndarray
    columns: tuple[str, ...]
    y: np.ndarray
    alternatives: tuple[str, ...]
    reference: int
    Z: np.ndarray
    param_names: tuple[str, ...]
    param_alternatives: tuple[tuple[str, ...], ...]
    param_columns: tuple[str, ...]
    ids: tuple[str, ...] = ()

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def explanatory(self) -> np.ndarray:
        """Mask of parameters that are not alternative-specific constants."""
        return np.array([c != ASC for c in self.param_columns])


def _slug(level) -> str:
    return re.sub(r"[^0-9A-Za-z]+", "_", str(level)).strip("_")


def _bool_series(s: pd.Series) -> pd.Series:
    """Boolean-ish column to float with NaN for missing."""
    if s.dtype == bool:
        return s.astype(float)

    def conv(v):
        if v is None or (isinstance(v, float) and np.isnan(v)) or v is pd.NA:
            return np.nan
        if isinstance(v, str):
            low = v.strip().lower()
            if low in ("true", "1", "yes"):
                return 1.0
            if low in ("false", "0", "no"):
                return 0.0
            if low == "":
                return np.nan
            raise DesignError(f"cannot read {v!r} as a boolean")
        return float(bool(v))

    return s.map(conv).astype(float)


def _numeric(frame: pd.DataFrame, name: str) -> pd.Series:
    s = frame[name]
    if s.dtype == bool or s.dtype == object and set(s.dropna().map(str).str.lower()) <= {"true", "false"}:
        return _bool_series(s)
    return pd.to_numeric(s, errors="raise").astype(float)


def _encode(term: Term, frame: pd.DataFrame) -> list[tuple[str, np.ndarray]]:
    t = term.transform
    if t in ("identity", "center", "missing_indicator", "one_hot") or (t == "combine" and term.levels):
        if term.variable not in frame.columns:
            raise DesignError(f"term {term.name!r}: column {term.variable!r} not in table")
    if t == "identity":
        x = _numeric(frame, term.variable)
        if x.isna().all():
            raise DesignError(f"column {term.variable!r} is entirely missing")
        if x.isna().any():
            raise DesignError(f"column {term.variable!r} has missing values; use center or missing_indicator")
        return [(term.name, x.to_numpy())]
    if t == "center":
        x = _numeric(frame, term.variable)
        if x.isna().all():
            raise DesignError(f"column {term.variable!r} is entirely missing")
        miss = x.isna().to_numpy()
        centered = (x - x.mean()).fillna(0.0).to_numpy()
        out = [(term.name, centered)]
        if miss.any():
            out.append((f"{term.name}_missing", miss.astype(float)))
        return out
    if t == "missing_indicator":
        s = frame[term.variable]
        miss = s.isna() | (s.astype(str).str.strip() == "")
        return [(term.name, miss.to_numpy(dtype=float))]
    if t == "one_hot":
        s = frame[term.variable]
        if s.isna().all():
            raise DesignError(f"column {term.variable!r} is entirely missing")
        s = s.astype(str)
        counts = s.value_counts()
        # most frequent level, ties by sorted level name
        ordered = sorted(counts.index, key=lambda lvl: (-counts[lvl], lvl))
        reference = term.reference if term.reference is not None else ordered[0]
        prefix = "" if term.name == term.variable else f"{term.name}_"
        return [(f"{prefix}is_{_slug(level)}", (s == level).to_numpy(dtype=float))
                for level in sorted(counts.index) if level != reference]
    if t == "combine":
        if term.levels:
            s = frame[term.variable].astype(str)
            return [(term.name, s.isin(term.levels).to_numpy(dtype=float))]
        if not term.columns:
            raise DesignError(f"term {term.name!r}: combine needs levels or columns")
        acc = np.zeros(len(frame))
        for col in term.columns:
            if col not in frame.columns:
                raise DesignError(f"term {term.name!r}: column {col!r} not in table")
            acc = np.maximum(acc, _bool_series(frame[col]).fillna(0.0).to_numpy())
        return [(term.name, acc)]
    raise SpecError(f"unknown transform {t!r}")


def estimation_sample(frame: pd.DataFrame, spec: ModelSpec) -> pd.DataFrame:
    keep = pd.Series(True, index=frame.index)
    for column, values in spec.sample.items():
        if column not in frame.columns:
            raise DesignError(f"sample filter column {column!r} not in table")
        keep &= frame[column].astype(str).isin(values)
    return frame[keep].reset_index(drop=True)


def build_design(paper_table: pd.DataFrame, spec: ModelSpec, id_column: str = "doi") -> Design:
    frame = estimation_sample(paper_table, spec)
    if spec.outcome not in frame.columns:
        raise DesignError(f"outcome column {spec.outcome!r} not in table")
    outcome = frame[spec.outcome].astype(str)
    unknown = sorted(set(outcome) - set(spec.alternatives))
    if frame[spec.outcome].isna().any() or unknown:
        raise DesignError(f"outcome values outside the alternatives: {unknown}")
    alt_index = {a: i for i, a in enumerate(spec.alternatives)}
    y = outcome.map(alt_index).to_numpy(dtype=np.int64)

    encoded: list[tuple[str, np.ndarray, tuple[str, ...]]] = []
    for term in spec.terms:
        for col, values in _encode(term, frame):
            encoded.append((col, values, spec.attached(term)))
    names = [c for c, _, _ in encoded]
    if len(set(names)) != len(names):
        raise DesignError(f"duplicate encoded columns: {sorted(n for n in names if names.count(n) > 1)}")
    for col, values, _ in encoded:
        if len(values) and np.ptp(values) == 0:
            raise DesignError(f"column {col!r} is constant after encoding")

    cols = ([(ASC, np.ones(len(frame)), spec.non_reference)] if spec.constants else []) + encoded
    # assign parameter ids; equality sets share one id
    group_of: dict[tuple[str, str], int] = {}
    for gi, eq in enumerate(spec.equality):
        for member in eq.members:
            group_of[member] = gi
    known_pairs = {(c, a) for c, _, alts in cols for a in alts}
    for member in group_of:
        if member not in known_pairs:
            raise SpecError(f"equality restriction member {member} does not match any column/alternative")

    param_names: list[str] = []
    param_alts: list[list[str]] = []
    param_cols: list[str] = []
    slot: dict[tuple[str, str], int] = {}
    group_slot: dict[int, int] = {}
    for col, _, alts in cols:
        for alt in alts:
            gi = group_of.get((col, alt))
            if gi is not None and gi in group_slot:
                p = group_slot[gi]
                param_alts[p].append(alt)
            else:
                p = len(param_names)
                param_names.append("")
                param_alts.append([alt])
                param_cols.append(col)
                if gi is not None:
                    group_slot[gi] = p
            slot[(col, alt)] = p
    for p in range(len(param_names)):
        gi = next((g for g, s in group_slot.items() if s == p), None)
        members = spec.equality[gi].members if gi is not None else ()
        if gi is not None and spec.equality[gi].name:
            param_names[p] = spec.equality[gi].name
        elif members and len({c for c, _ in members}) > 1:
            param_names[p] = "+".join(f"{c}[{a}]" for c, a in members)
        else:
            param_names[p] = f"{param_cols[p]}[{'+'.join(param_alts[p])}]"
    if len(set(param_names)) != len(param_names):
        raise SpecError("parameter names collide; name the equality restrictions")

    J, N, P = len(spec.alternatives), len(frame), len(param_names)
    Z = np.zeros((J, N, P))
    for col, values, alts in cols:
        for alt in alts:
            Z[alt_index[alt], :, slot[(col, alt)]] += values
    X = np.column_stack([v for _, v, _ in encoded]) if encoded else np.zeros((N, 0))
    ids = tuple(frame[id_column].astype(str)) if id_column in frame.columns else ()
    return Design(
        X=X,
        columns=tuple(names),
        y=y,
        alternatives=spec.alternatives,
        reference=alt_index[spec.reference],
        Z=Z,
        param_names=tuple(param_names),
        param_alternatives=tuple(tuple(a) for a in param_alts),
        param_columns=tuple(param_cols),
        ids=ids,
    )
