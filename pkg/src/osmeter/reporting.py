"""Descriptive tables, bivariate tests, citation series and the written report."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, NamedTuple, Protocol, Sequence

import numpy as np
import pandas as pd
import requests
from scipy import special, stats

log = logging.getLogger(__name__)

Z_95 = 1.959963984540054
NORMAL_SWITCH_N = 200
DAYS_PER_YEAR = 365.25


class ReportError(RuntimeError):
    pass


# -- descriptive statistics -----------------------------------------------------------

DEFAULT_NUMERIC = ("paper_age_years", "n_tables", "n_figures", "n_references", "n_authors",
                   "times_cited", "review_time_days", "n_pages")
DEFAULT_CATEGORICAL = ("data_availability", "open_access", "journal", "region_normalized",
                       "availability_statement_present", "topic_label", "code_link_kind")


@dataclass
class DescriptiveTable:
    group_by: str
    groups: list[tuple[str, int]]
    numeric: pd.DataFrame
    categorical: pd.DataFrame

    @property
    def total(self) -> int:
        return sum(n for _, n in self.groups)

    def shares(self) -> dict[str, float]:
        total = self.total
        return {g: (n / total if total else math.nan) for g, n in self.groups}


def _as_float(series: pd.Series) -> pd.Series:
    if series.dtype == object:
        low = series.astype(str).str.lower()
        if set(low.dropna()) <= {"true", "false", "nan", "<na>", ""}:
            return low.map({"true": 1.0, "false": 0.0}).astype(float)
    return pd.to_numeric(series, errors="coerce").astype(float)


def descriptive_table(
    paper_table: pd.DataFrame,
    group_by: str,
    numeric: Sequence[str] | None = None,
    categorical: Sequence[str] | None = None,
    groups: Sequence[str] | None = None,
) -> DescriptiveTable:
    """Mean and SD of numeric columns, counts and percents of categorical ones, per group.

    Missing numeric values are left out of the mean and SD. Missing categorical
    values are reported as the level ``missing``. A requested group with no rows
    gets zero counts and NaN statistics, and a warning is logged.
    """
    if group_by not in paper_table.columns:
        raise ReportError(f"group column {group_by!r} not in table")
    numeric = [c for c in (DEFAULT_NUMERIC if numeric is None else numeric) if c in paper_table.columns]
    categorical = [c for c in (DEFAULT_CATEGORICAL if categorical is None else categorical)
                   if c in paper_table.columns and c != group_by]
    keys = paper_table[group_by].astype(str)
    levels = list(groups) if groups is not None else sorted(keys.unique())
    group_rows = []
    num_rows, cat_rows = [], []
    for g in levels:
        part = paper_table[keys == g]
        if part.empty:
            log.warning("group %s=%s has no rows", group_by, g)
        group_rows.append((g, len(part)))
        for col in numeric:
            x = _as_float(part[col]).dropna()
            num_rows.append({
                "variable": col, "group": g, "n": int(len(x)),
                "mean": float(x.mean()) if len(x) else math.nan,
                "sd": float(x.std(ddof=1)) if len(x) > 1 else math.nan,
            })
        for col in categorical:
            values = part[col].astype("string").fillna("missing").replace({"<NA>": "missing", "": "missing"})
            counts = values.value_counts()
            all_levels = sorted(paper_table[col].astype("string").fillna("missing")
                                .replace({"<NA>": "missing", "": "missing"}).unique())
            for level in all_levels:
                c = int(counts.get(level, 0))
                cat_rows.append({
                    "variable": col, "level": level, "group": g, "count": c,
                    "percent": 100.0 * c / len(part) if len(part) else math.nan,
                })
    return DescriptiveTable(
        group_by=group_by,
        groups=group_rows,
        numeric=pd.DataFrame(num_rows, columns=["variable", "group", "n", "mean", "sd"]),
        categorical=pd.DataFrame(cat_rows, columns=["variable", "level", "group", "count", "percent"]),
    )


# -- bivariate tests ------------------------------------------------------------------


class SampleStats(NamedTuple):
    mean: float
    sd: float
    n: int


class WelchResult(NamedTuple):
    t: float
    df: float
    p: float
    diff: float
    ci_low: float
    ci_high: float


def _stats(sample) -> SampleStats:
    if isinstance(sample, SampleStats):
        return sample
    if isinstance(sample, tuple) and len(sample) == 3 and not isinstance(sample[0], (list, np.ndarray)):
        return SampleStats(float(sample[0]), float(sample[1]), int(sample[2]))
    x = np.asarray(sample, dtype=float)
    x = x[~np.isnan(x)]
    return SampleStats(float(x.mean()) if len(x) else math.nan,
                       float(x.std(ddof=1)) if len(x) > 1 else math.nan, len(x))


def welch_t_test(a, b) -> WelchResult:
    """Welch two-sample test of mean(a) - mean(b).

    ``a`` and ``b`` are raw samples or ``(mean, sd, n)`` summaries. The 95%
    interval uses the normal critical value when both samples exceed 200
    observations and the Welch t quantile otherwise.
    """
    sa, sb = _stats(a), _stats(b)
    if sa.n < 2 or sb.n < 2:
        raise ReportError("each sample needs at least two observations")
    va, vb = sa.sd ** 2 / sa.n, sb.sd ** 2 / sb.n
    diff = sa.mean - sb.mean
    se = math.sqrt(va + vb)
    if se == 0:
        # both samples constant
        if diff == 0:
            return WelchResult(0.0, float(sa.n + sb.n - 2), 1.0, 0.0, 0.0, 0.0)
        t = math.copysign(math.inf, diff)
        return WelchResult(t, float(sa.n + sb.n - 2), 0.0, diff, diff, diff)
    t = diff / se
    df = (va + vb) ** 2 / (va ** 2 / (sa.n - 1) + vb ** 2 / (sb.n - 1))
    p = float(2.0 * stats.t.sf(abs(t), df))
    crit = Z_95 if min(sa.n, sb.n) > NORMAL_SWITCH_N else float(stats.t.ppf(0.975, df))
    return WelchResult(float(t), float(df), p, diff, diff - crit * se, diff + crit * se)


class ChiSquareResult(NamedTuple):
    statistic: float
    df: int
    p: float


def chi2_sf(x: float, df: int) -> float:
    if df <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, max(x, 0.0) / 2.0))


def chi_square_independence(table) -> ChiSquareResult:
    """Pearson test of independence on an r x c table of counts."""
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or min(obs.shape) < 2:
        raise ReportError("contingency table must be at least 2 x 2")
    total = obs.sum()
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / total if total else np.zeros_like(obs)
    if (expected <= 0).any():
        raise ReportError("a cell has zero expected count; collapse sparse categories first")
    stat = float(((obs - expected) ** 2 / expected).sum())
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return ChiSquareResult(stat, df, chi2_sf(stat, df))


DEFAULT_TESTS = {
    "code_availability": {
        "groups": ["CA", "CU"],
        "numeric": list(DEFAULT_NUMERIC),
        "categorical": list(DEFAULT_CATEGORICAL),
    },
    "data_availability": {
        "groups": ["C_NR", "C_R", "NC_NR", "NC_R"],
        "numeric": ["paper_age_years", "review_time_days", "times_cited"],
        "categorical": ["code_availability", "journal", "region_normalized", "topic_label"],
    },
}


def bivariate_tests(paper_table: pd.DataFrame, battery: Mapping[str, Mapping] | None = None) -> pd.DataFrame:
    """Run the configured battery; tests that cannot be computed are kept with a note."""
    battery = DEFAULT_TESTS if battery is None else battery
    rows = []
    for outcome, cfg in battery.items():
        if outcome not in paper_table.columns:
            continue
        keys = paper_table[outcome].astype(str)
        groups = [g for g in cfg.get("groups", sorted(keys.unique()))]
        sub = paper_table[keys.isin(groups)]
        sub_keys = keys[keys.isin(groups)]
        for var in cfg.get("numeric", ()):
            if var not in sub.columns:
                continue
            row = {"outcome": outcome, "variable": var, "test": "welch_t", "statistic": math.nan,
                   "df": math.nan, "p_value": math.nan, "note": ""}
            if len(groups) != 2:
                row["note"] = "welch test needs two groups"
            else:
                try:
                    res = welch_t_test(_as_float(sub[sub_keys == groups[0]][var]).to_numpy(),
                                       _as_float(sub[sub_keys == groups[1]][var]).to_numpy())
                    row.update(statistic=res.t, df=res.df, p_value=res.p,
                               note=f"diff={res.diff:.4f} ci95=[{res.ci_low:.4f}, {res.ci_high:.4f}]")
                except ReportError as exc:
                    row["note"] = str(exc)
            rows.append(row)
        for var in cfg.get("categorical", ()):
            if var not in sub.columns or var == outcome:
                continue
            row = {"outcome": outcome, "variable": var, "test": "chi_square", "statistic": math.nan,
                   "df": math.nan, "p_value": math.nan, "note": ""}
            levels = sub[var].astype("string").fillna("missing")
            table = pd.crosstab(levels, sub_keys)
            try:
                res = chi_square_independence(table.to_numpy())
                row.update(statistic=res.statistic, df=res.df, p_value=res.p)
            except ReportError as exc:
                row["note"] = str(exc)
            rows.append(row)
    return pd.DataFrame(rows, columns=["outcome", "variable", "test", "statistic", "df", "p_value", "note"])


# -- citations ----------------------------------------------------------------------


class CitationClient(Protocol):
    def count(self, doi: str) -> int | None: ...


class CitationRateLimit(RuntimeError):
    def __init__(self, retry_after: float | None = None):
        super().__init__("citation service rate limit")
        self.retry_after = retry_after


class FixtureCitationClient:
    """Reads ``doi,citations`` rows from a CSV; unknown DOIs return None."""

    def __init__(self, path: str | Path):
        self.counts: dict[str, int] = {}
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                self.counts[row["doi"].strip().lower()] = int(row["citations"])
        self.calls = 0

    def count(self, doi: str) -> int | None:
        self.calls += 1
        return self.counts.get(doi.lower())


@dataclass
class ScopusClient:
    """Citation counts from the Scopus search API; key read from ``api_key_env``."""

    base_url: str = "https://api.elsevier.com/content/search/scopus"
    api_key_env: str = "OSMETER_SCOPUS_KEY"
    timeout: float = 30.0
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def count(self, doi: str) -> int | None:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ReportError(f"environment variable {self.api_key_env} is not set")
        resp = self.session.get(self.base_url, params={"query": f"DOI({doi})", "field": "citedby-count"},
                                headers={"X-ELS-APIKey": key, "Accept": "application/json"},
                                timeout=self.timeout)
        if resp.status_code == 429:
            ra = resp.headers.get("Retry-After")
            raise CitationRateLimit(float(ra) if ra and ra.isdigit() else None)
        resp.raise_for_status()
        entries = resp.json().get("search-results", {}).get("entry", [])
        if not entries or "error" in entries[0]:
            return None
        return int(entries[0].get("citedby-count", 0))


class CitationCache:
    """JSON file of ``{doi: {"count": int, "fetched_at": iso timestamp}}``."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.data: dict[str, dict[str, Any]] = {}
        if self.path and self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))

    def get(self, doi: str) -> int | None:
        entry = self.data.get(doi)
        return None if entry is None else int(entry["count"])

    def put(self, doi: str, count: int) -> None:
        with self._lock:
            self.data[doi] = {"count": int(count),
                              "fetched_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")}

    def save(self) -> None:
        if not self.path:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=1, sort_keys=True)
        os.replace(tmp, self.path)


class CitationLookup(NamedTuple):
    count: int | None
    missing: bool
    cached: bool


def fetch_citations(
    doi: str,
    client: CitationClient,
    cache: CitationCache | None = None,
    retries: int = 2,
    backoff: Sequence[float] = (1.0, 4.0),
    sleep: Callable[[float], None] = time.sleep,
) -> CitationLookup:
    if cache is not None:
        hit = cache.get(doi)
        if hit is not None:
            return CitationLookup(hit, False, True)
    for attempt in range(retries + 1):
        try:
            count = client.count(doi)
            break
        except CitationRateLimit as exc:
            if attempt == retries:
                log.warning("%s: citation lookup rate limited", doi)
                return CitationLookup(None, True, False)
            sleep(exc.retry_after if exc.retry_after is not None else backoff[min(attempt, len(backoff) - 1)])
    if count is None:
        return CitationLookup(None, True, False)
    if cache is not None:
        cache.put(doi, count)
    return CitationLookup(int(count), False, False)


# -- citation series -----------------------------------------------------------------


@dataclass
class CitationSeries:
    papers: pd.DataFrame
    aggregated: pd.DataFrame
    excluded: int = 0

    def band(self, year: int, group: str) -> tuple[float, float]:
        row = self.aggregated[(self.aggregated["year"] == year) & (self.aggregated["group"] == group)]
        if row.empty:
            raise KeyError((year, group))
        return float(row["lower"].iloc[0]), float(row["upper"].iloc[0])

    def overlaps(self, year: int, a: str, b: str) -> bool:
        la, ua = self.band(year, a)
        lb, ub = self.band(year, b)
        return la <= ub and lb <= ua


def citation_series(
    paper_table: pd.DataFrame,
    citations: Mapping[str, int],
    group_by: str = "code_availability",
    reference_date: dt.date | None = None,
) -> CitationSeries:
    """Citations per year since acceptance, binned by acceptance year and group.

    Years since acceptance are fractional (days / 365.25). Papers without an
    acceptance date, without a citation count, or accepted on or after the
    reference date are excluded and counted.
    """
    reference_date = reference_date or dt.date.today()
    rows, excluded = [], 0
    for rec in paper_table.itertuples(index=False):
        accepted = getattr(rec, "accepted_date", None)
        count = citations.get(rec.doi)
        if accepted is None or (isinstance(accepted, float) and math.isnan(accepted)) \
                or str(accepted) in ("", "nan", "<NA>", "None") or count is None:
            excluded += 1
            continue
        acc = dt.date.fromisoformat(str(accepted))
        years = (reference_date - acc).days / DAYS_PER_YEAR
        if years <= 0:
            excluded += 1
            continue
        rows.append({"doi": rec.doi, "year": acc.year, "group": str(getattr(rec, group_by)),
                     "citations": int(count), "citations_per_year": count / years})
    papers = pd.DataFrame(rows, columns=["doi", "year", "group", "citations", "citations_per_year"])
    agg_rows = []
    for (year, group), part in papers.groupby(["year", "group"], sort=True):
        x = part["citations_per_year"].to_numpy()
        mean = float(x.mean())
        sd = float(x.std(ddof=1)) if len(x) > 1 else math.nan
        half = Z_95 * sd / math.sqrt(len(x)) if len(x) > 1 else math.nan
        agg_rows.append({"year": int(year), "group": group, "n": len(x), "mean": mean, "sd": sd,
                         "lower": mean - half, "upper": mean + half})
    aggregated = pd.DataFrame(agg_rows, columns=["year", "group", "n", "mean", "sd", "lower", "upper"])
    if excluded:
        log.info("citation series: %d papers excluded", excluded)
    return CitationSeries(papers, aggregated, excluded)


# -- report --------------------------------------------------------------------------

FOOTER = ("Citation trends are summarized as yearly means with 95% normal bands in place of a "
          "smoothed curve.")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return f"{value:.4g}" if abs(value) < 1e-3 and value != 0 else f"{value:.4f}"
    return str(value)


def markdown_table(frame: pd.DataFrame) -> str:
    if frame.empty:
        return "_(no rows)_\n"
    cols = list(frame.columns)
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for row in frame.itertuples(index=False):
        lines.append("| " + " | ".join(_fmt(v).replace("|", "\\|") for v in row) + " |")
    return "\n".join(lines) + "\n"


def _write(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


@dataclass
class ReportInputs:
    paper_table: pd.DataFrame
    descriptive: Mapping[str, DescriptiveTable] = field(default_factory=dict)
    tests: pd.DataFrame | None = None
    models: Mapping[str, Any] = field(default_factory=dict)  # name -> ChoiceModelResult
    agreement: pd.DataFrame | None = None
    citations: CitationSeries | None = None
    integrity: pd.DataFrame | None = None
    notes: Sequence[str] = ()


def emit_report(inputs: ReportInputs, out_dir: str | Path, fmt: str = "markdown") -> list[Path]:
    """Write CSV tables and a markdown summary; returns the written paths in order."""
    if fmt != "markdown":
        raise ReportError(f"unsupported report format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ReportError(f"cannot write to {out}: {exc}") from exc

    written: list[Path] = []
    md: list[str] = ["# Open-science availability report", ""]
    table = inputs.paper_table
    md.append(f"Papers analysed: {len(table)}")
    md.append("")
    for col, title in (("code_availability", "Code availability"), ("data_availability", "Data availability")):
        if col in table.columns:
            counts = table[col].astype(str).value_counts().sort_index()
            frame = pd.DataFrame({"class": counts.index, "n": counts.values,
                                  "percent": 100.0 * counts.values / max(len(table), 1)})
            path = out / f"{col}_counts.csv"
            _write(frame, path)
            written.append(path)
            md += [f"## {title}", "", markdown_table(frame)]

    for name, desc in sorted(inputs.descriptive.items()):
        npath, cpath = out / f"descriptive_{name}_numeric.csv", out / f"descriptive_{name}_categorical.csv"
        _write(desc.numeric, npath)
        _write(desc.categorical, cpath)
        written += [npath, cpath]
        groups = ", ".join(f"{g} (N={n})" for g, n in desc.groups)
        md += [f"## Descriptive statistics by {desc.group_by}", "", f"Groups: {groups}", "",
               markdown_table(desc.numeric), markdown_table(desc.categorical)]

    if inputs.tests is not None:
        path = out / "bivariate_tests.csv"
        _write(inputs.tests, path)
        written.append(path)
        md += ["## Bivariate tests", "", markdown_table(inputs.tests)]

    md += ["## Choice models", ""]
    if not inputs.models:
        md += ["Model results were not provided; this section is omitted.", ""]
    for name, result in sorted(inputs.models.items()):
        est = pd.DataFrame(result.table())
        fit = pd.DataFrame({"statistic": list(result.fit_block()),
                            "value": [_fmt(v) for v in result.fit_block().values()]})
        epath, fpath = out / f"model_{name}_estimates.csv", out / f"model_{name}_fit.csv"
        _write(est, epath)
        _write(fit, fpath)
        written += [epath, fpath]
        md += [f"### {name}", "", markdown_table(est), markdown_table(fit)]

    if inputs.agreement is not None:
        path = out / "agreement.csv"
        _write(inputs.agreement, path)
        written.append(path)
        md += ["## Inter-rater agreement", "", markdown_table(inputs.agreement)]

    if inputs.citations is not None:
        ppath, apath = out / "citation_papers.csv", out / "citation_series.csv"
        _write(inputs.citations.papers, ppath)
        _write(inputs.citations.aggregated, apath)
        written += [ppath, apath]
        md += ["## Citations per year", "", f"Papers excluded: {inputs.citations.excluded}", "",
               markdown_table(inputs.citations.aggregated)]

    if inputs.integrity is not None:
        path = out / "integrity_report.csv"
        _write(inputs.integrity, path)
        written.append(path)
        md += ["## Integrity checks", "", markdown_table(inputs.integrity)]

    md += ["---", "", *inputs.notes, FOOTER, ""]
    path = out / "report.md"
    path.write_text("\n".join(md), encoding="utf-8")
    written.append(path)
    return written
