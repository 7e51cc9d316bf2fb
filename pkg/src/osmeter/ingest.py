"""Article ingestion: canonical JSON records, a minimal XML adapter, and metadata covariates.

Canonical schema
----------------
One UTF-8 JSON object per file (``*.json``) or one object per line
(``*.jsonl``). Keys are the :class:`ArticleRecord` field names; missing values
are ``null``. ``authors`` is a list of ``{"name", "country", "corresponding"}``
objects (``[name, country]`` pairs are accepted too). Two optional keys,
``first_page`` and ``last_page``, take precedence over ``n_pages``.

XML subset
----------
The adapter reads a small set of tags and ignores everything else. Namespace
prefixes are dropped, so ``prism:doi`` and ``doi`` are the same tag.

==========================  ==========================================
tag                         field
==========================  ==========================================
doi                         doi
title / article-title       title
journal / publicationName   journal (full name or short code)
article-type / document-subtype   article_type (``fla``, ``edi``, ``rev``)
year / coverDate            year
date-received               received_date (ISO text or day/month/year attributes)
date-accepted / date-revised-accepted   accepted_date
author                      authors (``country`` and ``corresponding`` attributes or children)
abstract                    abstract
keyword                     keywords
body                        body_text (``section-title``/``para`` rendered as markdown)
bib-reference / ref         references_text, n_references
figure, table               n_figures, n_tables
first-page / startingPage   first_page
last-page / endingPage      last_page
page-count                  n_pages
open-access / openaccess    open_access
==========================  ==========================================
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, NamedTuple
from urllib.parse import unquote

from osmeter.regions import Region, normalize_region

log = logging.getLogger(__name__)

JOURNALS = ("TR-A", "TR-B", "TR-C", "TR-D", "TR-E", "TR-F", "TR-IP")
JOURNAL_NAMES = {
    "TR-A": "Transportation Research Part A: Policy and Practice",
    "TR-B": "Transportation Research Part B: Methodological",
    "TR-C": "Transportation Research Part C: Emerging Technologies",
    "TR-D": "Transportation Research Part D: Transport and Environment",
    "TR-E": "Transportation Research Part E: Logistics and Transportation Review",
    "TR-F": "Transportation Research Part F: Traffic Psychology and Behaviour",
    "TR-IP": "Transportation Research Interdisciplinary Perspectives",
}
ARTICLE_TYPES = ("full-length", "editorial", "review", "other")

DOI_RE = re.compile(r"^10\.\d{4,9}/\S+$")
_DOI_PREFIX_RE = re.compile(
    r"^(?:(?:https?://)?(?:dx\.)?doi\.org/|doi:\s*|urn:doi:)", re.IGNORECASE
)

_TRUE = {"true", "t", "yes", "y", "1"}
_FALSE = {"false", "f", "no", "n", "0"}


class IngestError(Exception):
    pass


class ParseError(IngestError):
    """The document is not well-formed; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int, source: str = ""):
        super().__init__(f"{source or '<document>'}: {message} (byte offset {offset})")
        self.offset = offset
        self.source = source


class RejectionError(IngestError):
    """The document parsed but cannot become a record (bad DOI, unknown journal, ...)."""

    def __init__(self, reason: str, source: str = "", doi: str | None = None):
        super().__init__(f"{source or '<document>'}: {reason}")
        self.reason = reason
        self.source = source
        self.doi = doi


@dataclass(frozen=True)
class Author:
    name: str
    country: str | None = None
    corresponding: bool = False


@dataclass(frozen=True)
class ArticleRecord:
    doi: str
    title: str
    journal: str
    article_type: str
    year: int
    received_date: dt.date | None = None
    accepted_date: dt.date | None = None
    published_date: dt.date | None = None
    authors: tuple[Author, ...] = ()
    corresponding_country: str | None = None
    abstract: str = ""
    keywords: tuple[str, ...] = ()
    body_text: str = ""
    references_text: str = ""
    n_figures: int | None = None
    n_tables: int | None = None
    n_references: int | None = None
    n_pages: int | None = None
    n_authors: int = 0
    open_access: bool | None = None
    flags: tuple[str, ...] = ()

    @property
    def region(self) -> Region:
        return normalize_region(self.corresponding_country)

    @property
    def regions_listed(self) -> tuple[Region, ...]:
        seen = {normalize_region(a.country) for a in self.authors}
        seen.discard(Region.UNKNOWN)
        return tuple(r for r in Region if r in seen)

    def to_json(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        for key in ("received_date", "accepted_date", "published_date"):
            out[key] = out[key].isoformat() if out[key] else None
        out["authors"] = [dataclasses.asdict(a) for a in self.authors]
        out["keywords"] = list(self.keywords)
        out["flags"] = list(self.flags)
        return out


@dataclass
class Exclusion:
    source: str
    reason: str
    doi: str | None = None


@dataclass
class IngestResult:
    records: list[ArticleRecord] = field(default_factory=list)
    exclusions: list[Exclusion] = field(default_factory=list)


# -- normalization helpers ---------------------------------------------------


def normalize_doi(doi: str) -> str:
    """Lowercase a DOI and strip ``doi:`` / resolver URL prefixes. Idempotent."""
    text = unquote(str(doi)).strip()
    while True:
        stripped = _DOI_PREFIX_RE.sub("", text, count=1).strip()
        if stripped == text:
            break
        text = stripped
    return text.lower()


def is_valid_doi(doi: str) -> bool:
    return bool(DOI_RE.match(doi))


def coerce_bool(value: Any) -> bool | None:
    """Map the usual spellings of a logical value onto ``True``/``False``.

    ``None`` and unrecognised strings give ``None`` (kept missing, not guessed).
    """
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and value in (0, 1):
        return bool(value)
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    return None


def normalize_journal(value: str | None) -> str | None:
    if not value:
        return None
    text = " ".join(str(value).split())
    upper = text.upper().replace("_", "-")
    if upper in JOURNALS:
        return upper
    compact = upper.replace("-", "").replace(" ", "")
    for code in JOURNALS:
        if compact == code.replace("-", ""):
            return code
    low = text.lower()
    if "interdisciplinary perspectives" in low:
        return "TR-IP"
    m = re.search(r"part\s+([a-f])\b", low)
    if m and "transportation research" in low:
        return "TR-" + m.group(1).upper()
    return None


def normalize_article_type(value: str | None) -> str:
    if not value:
        return "other"
    low = str(value).strip().lower()
    if low in ("full-length", "fla", "full length article", "full-length article",
               "research article", "research-article", "article"):
        return "full-length"
    if low in ("editorial", "edi", "editorial note"):
        return "editorial"
    if low in ("review", "rev", "review article", "review-article"):
        return "review"
    return "other"


def _parse_date(value: Any, name: str, flags: list[str]) -> dt.date | None:
    if value in (None, ""):
        return None
    try:
        return dt.date.fromisoformat(str(value).strip()[:10])
    except ValueError:
        flags.append(f"invalid_{name}")
        log.warning("unparseable %s %r; kept missing", name, value)
        return None


def _nonneg_int(value: Any) -> int | None:
    if value in (None, ""):
        return None
    try:
        n = int(value)
    except (TypeError, ValueError):
        return None
    return n if n >= 0 else None


def _page_count(first: Any, last: Any, declared: Any) -> int | None:
    try:
        lo, hi = int(first), int(last)
    except (TypeError, ValueError):
        return _nonneg_int(declared)
    if hi >= lo:
        return hi - lo + 1
    return _nonneg_int(declared)


def _authors(raw: Any) -> tuple[Author, ...]:
    out = []
    for item in raw or ():
        if isinstance(item, dict):
            out.append(Author(
                name=str(item.get("name") or ""),
                country=item.get("country") or None,
                corresponding=bool(coerce_bool(item.get("corresponding"))),
            ))
        elif isinstance(item, (list, tuple)):
            name = item[0] if item else ""
            country = item[1] if len(item) > 1 else None
            out.append(Author(name=str(name or ""), country=country or None))
        else:
            out.append(Author(name=str(item)))
    return tuple(out)


def _corresponding_country(explicit: Any, authors: tuple[Author, ...]) -> str | None:
    if explicit:
        return str(explicit)
    for a in authors:
        if a.corresponding and a.country:
            return a.country
    # first author stands in when no corresponding author is marked
    for a in authors[:1]:
        if a.country:
            return a.country
    return None


def record_from_mapping(data: dict[str, Any], source: str = "") -> ArticleRecord:
    """Validate a canonical-schema mapping and build an :class:`ArticleRecord`."""
    raw_doi = data.get("doi")
    if not raw_doi:
        raise RejectionError("missing DOI", source)
    doi = normalize_doi(raw_doi)
    if not is_valid_doi(doi):
        raise RejectionError(f"invalid DOI {raw_doi!r}", source, doi=doi)

    journal = normalize_journal(data.get("journal"))
    if journal is None:
        raise RejectionError(f"unknown journal {data.get('journal')!r}", source, doi=doi)

    try:
        year = int(data.get("year"))
    except (TypeError, ValueError):
        raise RejectionError(f"missing or invalid year {data.get('year')!r}", source, doi=doi)
    if not 1900 <= year <= dt.date.today().year:
        raise RejectionError(f"year {year} out of range", source, doi=doi)

    flags: list[str] = []
    received = _parse_date(data.get("received_date"), "received_date", flags)
    accepted = _parse_date(data.get("accepted_date"), "accepted_date", flags)
    published = _parse_date(data.get("published_date"), "published_date", flags)
    if received and accepted and accepted < received:
        flags.append("accepted_before_received")

    authors = _authors(data.get("authors"))
    keywords = data.get("keywords") or ()
    if isinstance(keywords, str):
        keywords = [k.strip() for k in re.split(r"[;,]", keywords) if k.strip()]

    return ArticleRecord(
        doi=doi,
        title=str(data.get("title") or ""),
        journal=journal,
        article_type=normalize_article_type(data.get("article_type")),
        year=year,
        received_date=received,
        accepted_date=accepted,
        published_date=published,
        authors=authors,
        corresponding_country=_corresponding_country(data.get("corresponding_country"), authors),
        abstract=str(data.get("abstract") or ""),
        keywords=tuple(str(k) for k in keywords),
        body_text=str(data.get("body_text") or ""),
        references_text=str(data.get("references_text") or ""),
        n_figures=_nonneg_int(data.get("n_figures")),
        n_tables=_nonneg_int(data.get("n_tables")),
        n_references=_nonneg_int(data.get("n_references")),
        n_pages=_page_count(data.get("first_page"), data.get("last_page"), data.get("n_pages")),
        n_authors=len(authors),
        open_access=coerce_bool(data.get("open_access")),
        flags=tuple(flags),
    )


# -- document parsing ----------------------------------------------------------


def _char_to_byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def parse_json_document(raw: bytes | str, source: str = "", base_offset: int = 0) -> ArticleRecord:
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, base_offset + _char_to_byte_offset(text, exc.pos), source) from exc
    if not isinstance(data, dict):
        raise ParseError("expected a JSON object", base_offset, source)
    return record_from_mapping(data, source)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1].rsplit(":", 1)[-1].lower()


def _text(el: ET.Element | None) -> str:
    if el is None:
        return ""
    return " ".join("".join(el.itertext()).split())


def _find(root: ET.Element, *names: str) -> ET.Element | None:
    wanted = {n.lower() for n in names}
    for el in root.iter():
        if _local(el.tag) in wanted:
            return el
    return None


def _find_all(root: ET.Element, *names: str) -> list[ET.Element]:
    wanted = {n.lower() for n in names}
    return [el for el in root.iter() if _local(el.tag) in wanted]


def _xml_date(el: ET.Element | None) -> str | None:
    if el is None:
        return None
    attrs = {_local(k): v for k, v in el.attrib.items()}
    if {"year", "month", "day"} <= attrs.keys():
        try:
            return dt.date(int(attrs["year"]), int(attrs["month"]), int(attrs["day"])).isoformat()
        except ValueError:
            return f"{attrs['year']}-{attrs['month']}-{attrs['day']}"
    return _text(el) or None


def _render_body(body: ET.Element | None) -> str:
    if body is None:
        return ""
    parts: list[str] = []

    def walk(el: ET.Element, depth: int) -> None:
        name = _local(el.tag)
        if name in ("section-title", "title") and depth > 0:
            parts.append("#" * min(depth, 6) + " " + _text(el))
            return
        if name in ("para", "p", "simple-para"):
            parts.append(_text(el))
            return
        if name in ("figure", "table", "float-anchor"):
            caption = _find(el, "caption")
            if caption is not None:
                parts.append(_text(caption))
            return
        if name in ("section", "sec") or el is body:
            for child in el:
                walk(child, depth + 1)
            return
        if len(el):
            for child in el:
                walk(child, depth)
        elif _text(el):
            parts.append(_text(el))

    walk(body, 0)
    return "\n\n".join(p for p in parts if p)


def parse_xml_document(raw: bytes | str, source: str = "") -> ArticleRecord:
    data = raw.encode("utf-8") if isinstance(raw, str) else raw
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        lines = data.split(b"\n")
        offset = sum(len(l) + 1 for l in lines[: line - 1]) + col
        raise ParseError(str(exc), offset, source) from exc

    authors = []
    for el in _find_all(root, "author"):
        attrs = {_local(k): v for k, v in el.attrib.items()}
        name_el = _find(el, "name")
        given, surname = _find(el, "given-name"), _find(el, "surname")
        if name_el is not None:
            name = _text(name_el)
        elif given is not None or surname is not None:
            name = " ".join(filter(None, (_text(given), _text(surname))))
        else:
            name = _text(el)
        country = attrs.get("country") or _text(_find(el, "country")) or None
        authors.append({
            "name": name,
            "country": country,
            "corresponding": attrs.get("corresponding", "false"),
        })

    refs = _find_all(root, "bib-reference", "ref")
    cover = _text(_find(root, "coverdate"))
    year = _text(_find(root, "year")) or cover[:4]
    type_el = _find(root, "article-type", "document-subtype")
    root_attrs = {_local(k): v for k, v in root.attrib.items()}
    body = _find(root, "body")

    mapping = {
        "doi": _text(_find(root, "doi")),
        "title": _text(_find(root, "article-title", "title")),
        "journal": _text(_find(root, "journal", "publicationname")),
        "article_type": _text(type_el) if type_el is not None else root_attrs.get("type"),
        "year": year or None,
        "received_date": _xml_date(_find(root, "date-received")),
        "accepted_date": _xml_date(_find(root, "date-accepted", "date-revised-accepted")),
        "published_date": cover if len(cover) >= 10 else None,
        "authors": authors,
        "abstract": _text(_find(root, "abstract")),
        "keywords": [_text(k) for k in _find_all(root, "keyword")],
        "body_text": _render_body(body),
        "references_text": "\n".join(_text(r) for r in refs),
        "n_figures": len(_find_all(body, "figure")) if body is not None else None,
        "n_tables": len(_find_all(body, "table")) if body is not None else None,
        "n_references": len(refs),
        "first_page": _text(_find(root, "first-page", "startingpage")) or None,
        "last_page": _text(_find(root, "last-page", "endingpage")) or None,
        "n_pages": _text(_find(root, "page-count")) or None,
        "open_access": _text(_find(root, "open-access", "openaccess")) or None,
    }
    return record_from_mapping(mapping, source)


def parse_article(raw: bytes | str, source: str = "") -> ArticleRecord:
    """Parse one canonical JSON document or XML document into a record."""
    head = (raw.lstrip()[:1] if isinstance(raw, bytes) else raw.lstrip()[:1].encode())
    if head == b"<":
        return parse_xml_document(raw, source)
    return parse_json_document(raw, source)


def _iter_documents(path: Path) -> Iterable[tuple[str, bytes, int]]:
    if path.is_dir():
        for child in sorted(path.iterdir()):
            if child.suffix.lower() in (".json", ".xml", ".jsonl"):
                yield from _iter_documents(child)
        return
    data = path.read_bytes()
    if path.suffix.lower() == ".jsonl":
        offset = 0
        for lineno, line in enumerate(data.split(b"\n"), start=1):
            if line.strip():
                yield f"{path.name}:{lineno}", line, offset
            offset += len(line) + 1
    else:
        yield path.name, data, 0


def ingest_paths(paths: Iterable[str | Path]) -> IngestResult:
    """Parse every document under ``paths``; failures go to the exclusion report."""
    result = IngestResult()
    seen: set[str] = set()
    for p in paths:
        for source, raw, offset in _iter_documents(Path(p)):
            try:
                if raw.lstrip()[:1] == b"<":
                    record = parse_xml_document(raw, source)
                else:
                    record = parse_json_document(raw, source, base_offset=offset)
            except ParseError as exc:
                result.exclusions.append(Exclusion(source, f"parse error at byte {exc.offset}"))
                continue
            except RejectionError as exc:
                result.exclusions.append(Exclusion(source, exc.reason, exc.doi))
                continue
            if record.doi in seen:
                result.exclusions.append(Exclusion(source, "duplicate DOI", record.doi))
                continue
            seen.add(record.doi)
            result.records.append(record)
    return result


def filter_full_length(records: Iterable[ArticleRecord]) -> list[ArticleRecord]:
    return [r for r in records if r.article_type == "full-length"]


class ReviewTime(NamedTuple):
    days: int | None
    missing: bool
    invalid: bool = False


def compute_review_time(record: ArticleRecord) -> ReviewTime:
    """Days from submission to acceptance; negative intervals are flagged and dropped."""
    if record.received_date is None or record.accepted_date is None:
        return ReviewTime(None, True)
    days = (record.accepted_date - record.received_date).days
    if days < 0:
        log.warning("%s: accepted before received (%d days); review time set missing",
                    record.doi, days)
        return ReviewTime(None, True, True)
    return ReviewTime(days, False)


def reference_publication_date(record: ArticleRecord) -> dt.date:
    """Best available publication date: explicit, else acceptance, else mid-year."""
    return record.published_date or record.accepted_date or dt.date(record.year, 7, 1)


# -- corpus files ---------------------------------------------------------------


def record_from_json(data: dict[str, Any]) -> ArticleRecord:
    """Inverse of :meth:`ArticleRecord.to_json` (round-trips exactly)."""
    data = dict(data)
    for key in ("received_date", "accepted_date", "published_date"):
        data[key] = dt.date.fromisoformat(data[key]) if data.get(key) else None
    data["authors"] = tuple(Author(**a) for a in data.get("authors") or ())
    data["keywords"] = tuple(data.get("keywords") or ())
    data["flags"] = tuple(data.get("flags") or ())
    return ArticleRecord(**data)


def write_corpus(records: Iterable[ArticleRecord], path: str | Path) -> None:
    path = Path(path)
    rows = [r.to_json() for r in records]
    if path.suffix.lower() == ".csv":
        fields = [f.name for f in dataclasses.fields(ArticleRecord)]
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                for key in ("authors", "keywords", "flags"):
                    row[key] = json.dumps(row[key], ensure_ascii=False)
                writer.writerow({k: "" if v is None else v for k, v in row.items()})
        return
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def read_corpus(path: str | Path) -> list[ArticleRecord]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        out = []
        with path.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                data: dict[str, Any] = {k: (v if v != "" else None) for k, v in row.items()}
                for key in ("authors", "keywords", "flags"):
                    data[key] = json.loads(data[key]) if data[key] else []
                for key in ("year", "n_figures", "n_tables", "n_references", "n_pages", "n_authors"):
                    data[key] = int(data[key]) if data[key] is not None else None
                data["n_authors"] = data["n_authors"] or 0
                data["open_access"] = coerce_bool(data["open_access"])
                for key in ("title", "abstract", "body_text", "references_text"):
                    data[key] = data[key] or ""
                out.append(record_from_json(data))
        return out
    with path.open(encoding="utf-8") as fh:
        return [record_from_json(json.loads(line)) for line in fh if line.strip()]


def write_exclusions(exclusions: Iterable[Exclusion], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source", "doi", "reason"])
        for ex in exclusions:
            writer.writerow([ex.source, ex.doi or "", ex.reason])
