from __future__ import annotations

import csv
import dataclasses
import datetime as dt

import pytest

from osmeter.availability import (
    CA_COHERENCE,
    LINK_REFERENCE,
    CodeAvailability,
    DataAvailability,
    build_tables,
    classify_code,
    classify_data,
    integrity_check,
)
from osmeter.extract import FeatureExtraction
from osmeter.ingest import ingest_paths, record_from_mapping
from osmeter.links import HostCategory, LinkRecord, Liveness


def feats(doi="10.1016/j.trc.2021.1", **kw):
    return FeatureExtraction(doi=doi, source="human", **kw)


def rec(doi="10.1016/j.trc.2021.1", **kw):
    base = {"doi": doi, "title": "t", "journal": "TR-C", "year": 2021, "article_type": "fla",
            "accepted_date": "2021-01-01", "body_text": "b"}
    return record_from_mapping({**base, **kw})


@pytest.mark.parametrize("quant,avail,expected,complete", [
    (True, True, CodeAvailability.CA, True),
    (True, False, CodeAvailability.CU, True),
    (False, True, CodeAvailability.NOT_APPLICABLE, True),
    (True, None, CodeAvailability.CU, False),
    (None, True, CodeAvailability.CA, False),
])
def test_classify_code(quant, avail, expected, complete):
    c = classify_code(feats(is_quantitative_study=quant, is_code_publicly_available=avail))
    assert c.value is expected and c.complete is complete


def test_dead_link_still_counts_as_shared():
    dead = LinkRecord("d", "https://github.com/a/b", "https://github.com/a/b",
                      HostCategory.CODE_HOST, Liveness.DEAD)
    f = feats(is_quantitative_study=True, is_code_publicly_available=True)
    assert classify_code(f, [dead]).value is CodeAvailability.CA


@pytest.mark.parametrize("cited,repo,expected", [
    (False, False, DataAvailability.NC_NR),
    (False, True, DataAvailability.NC_R),
    (True, False, DataAvailability.C_NR),
    (True, True, DataAvailability.C_R),
])
def test_classify_data(cited, repo, expected):
    assert classify_data(feats(is_data_cited=cited, is_data_repository_available=repo)).value is expected


def test_classify_data_missing_is_flagged():
    c = classify_data(feats(is_data_cited=True))
    assert c.value is DataAvailability.C_NR
    assert c.missing == ("is_data_repository_available",) and not c.complete


def _truth_features(fixtures_dir):
    out = []
    with open(fixtures_dir / "golden" / "truth.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {k: row[k] == "true" for k in ("is_quantitative_study", "is_code_publicly_available",
                                                  "is_data_cited", "is_data_repository_available")}
            out.append(feats(doi=row["doi"], **vals))
    return out


def test_golden_tables(fixtures_dir):
    records = ingest_paths([fixtures_dir / "golden" / "articles"]).records
    tables = build_tables(records, _truth_features(fixtures_dir), [], reference_date=dt.date(2025, 1, 1))
    p = tables.paper_table
    assert len(p) == 20 and p["doi"].is_unique and not tables.exclusions
    assert p["code_availability"].value_counts().to_dict() == {"CU": 13, "CA": 4, "NotApplicable": 3}
    assert p["data_availability"].value_counts().to_dict() == {"NC_NR": 9, "C_NR": 7, "C_R": 2, "NC_R": 2}
    assert integrity_check(tables).ok


def test_age_in_fractional_years():
    tables = build_tables([rec(accepted_date="2024-01-01")], [feats()], [],
                          reference_date=dt.date(2025, 1, 1))
    assert tables.paper_table["paper_age_years"].iloc[0] == pytest.approx(366 / 365.25)


def test_duplicate_doi_excludes_all_copies():
    a = rec()
    b = dataclasses.replace(a, title="copy")
    other = rec(doi="10.1016/j.trc.2021.2")
    tables = build_tables([a, b, other], [feats(), feats(doi=other.doi)], [])
    assert list(tables.paper_table["doi"]) == [other.doi]
    assert [(e.doi, e.rule) for e in tables.exclusions] == [(a.doi, "duplicate_doi")]


def test_missing_features_and_orphan_links():
    link = LinkRecord("10.1016/j.trc.2021.9", "https://x.org", "https://x.org", HostCategory.OTHER_WEB)
    tables = build_tables([rec()], [], [link])
    assert tables.paper_table.empty
    assert sorted(e.rule for e in tables.exclusions) == ["missing_features", "orphan_links"]
    assert tables.link_table.empty


def test_artifact_rows_dedupe_canonical():
    f = feats(is_quantitative_study=True, is_code_publicly_available=True,
              code_links=("https://github.com/a/b", "http://GitHub.com/a/b/"),
              data_links=("https://zenodo.org/record/1",))
    tables = build_tables([rec()], [f], [])
    art = tables.artifact_table
    assert list(art["artifact_kind"]) == ["code", "data"]
    assert list(art["host_category"]) == ["code_host", "open_repo_doi"]
    assert tables.paper_table["has_code_link_github"].iloc[0]


def test_integrity_clean_and_orphan():
    tables = build_tables([rec()], [feats(is_quantitative_study=True)], [])
    assert integrity_check(tables).violations == []
    tables.link_table.loc[0] = ["10.1016/j.trc.2021.99", "u", "u", "other_web", "unchecked", "unknown", ""]
    report = integrity_check(tables)
    assert [(v.rule, v.severity) for v in report.violations] == [(LINK_REFERENCE, "error")]
    assert not report.ok


def test_integrity_ca_without_evidence_is_warning():
    f = feats(is_quantitative_study=True, is_code_publicly_available=True)
    tables = build_tables([rec()], [f], [])
    report = integrity_check(tables)
    assert [v.rule for v in report.warnings] == [CA_COHERENCE]
    assert report.ok
    quoted = dataclasses.replace(f, justification_quotes={"reason_code_available": "code is on request"})
    assert integrity_check(build_tables([rec()], [quoted], [])).violations == []


def test_write_tables(tmp_path, fixtures_dir):
    records = ingest_paths([fixtures_dir / "golden" / "articles"]).records
    tables = build_tables(records, _truth_features(fixtures_dir), [], reference_date=dt.date(2025, 1, 1))
    tables.write(tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["artifact_table.csv", "link_table.csv", "paper_table.csv", "table_exclusions.csv"]


def test_partition_and_rebuild_is_byte_identical(fixtures_dir, tmp_path):
    records = ingest_paths([fixtures_dir / "golden" / "articles"]).records
    feats_ = _truth_features(fixtures_dir)
    ref = dt.date(2025, 1, 1)
    a = build_tables(records, feats_, [], reference_date=ref)
    b = build_tables(list(reversed(records)), list(reversed(feats_)), [], reference_date=ref)
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    for name in ("paper_table.csv", "artifact_table.csv", "link_table.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    p = a.paper_table
    assert p["data_availability"].value_counts().sum() == len(p)
    quant = p["is_quantitative_study"].astype(bool)
    assert (p.loc[~quant, "code_availability"] == "NotApplicable").all()
    assert p.loc[quant, "code_availability"].isin(["CA", "CU"]).all()
