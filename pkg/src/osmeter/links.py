"""URL extraction, canonization, host classification and liveness checks."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import fnmatch
import json
import logging
import re
import socket
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence
from urllib.parse import unquote, urlsplit, urlunsplit

import requests

log = logging.getLogger(__name__)


class HostCategory(str, enum.Enum):
    CODE_HOST = "code_host"
    OPEN_REPO_DOI = "open_repo_doi"
    GOV_OPEN_DATA = "gov_open_data"
    UNIVERSITY_REPO = "university_repo"
    BENCHMARK_HUB = "benchmark_hub"
    NGO_NONPROFIT = "ngo_nonprofit"
    OTHER_WEB = "other_web"

    @property
    def count_column(self) -> str:
        if self is HostCategory.NGO_NONPROFIT:
            return "n_src_ngo_nonprofit_org"
        return f"n_src_{self.value}"


class Liveness(str, enum.Enum):
    LIVE = "live"
    DEAD = "dead"
    UNKNOWN = "unknown"
    UNCHECKED = "unchecked"


class ContentKind(str, enum.Enum):
    CODE = "code"
    DATA = "data"
    MIXED = "mixed"
    UNKNOWN = "unknown"


LINK_COLUMNS = ("doi", "raw_url", "canonical_url", "host_category", "liveness",
                "content_kind_hint", "checked_at")


# -- rule table ---------------------------------------------------------------------


@dataclass(frozen=True)
class HostRule:
    category: HostCategory
    domains: tuple[str, ...] = ()
    host_patterns: tuple[re.Pattern, ...] = ()
    url_patterns: tuple[re.Pattern, ...] = ()
    host_path_patterns: tuple[re.Pattern, ...] = ()

    def matches(self, url: str, host: str, path: str) -> bool:
        if any(host == d or host.endswith("." + d) for d in self.domains):
            return True
        if any(p.search(host) for p in self.host_patterns):
            return True
        if any(p.search(url) for p in self.url_patterns):
            return True
        return any(p.search(host + path) for p in self.host_path_patterns)


@dataclass(frozen=True)
class RuleTable:
    version: str
    rules: tuple[HostRule, ...]
    tracking_params: tuple[str, ...]

    @property
    def known_domains(self) -> tuple[str, ...]:
        return tuple(d for r in self.rules for d in r.domains)

    @classmethod
    def from_json(cls, data: Mapping) -> "RuleTable":
        rules = []
        for raw in data["rules"]:
            rules.append(HostRule(
                category=HostCategory(raw["category"]),
                domains=tuple(d.lower() for d in raw.get("domains", ())),
                host_patterns=tuple(re.compile(p) for p in raw.get("host_patterns", ())),
                url_patterns=tuple(re.compile(p) for p in raw.get("url_patterns", ())),
                host_path_patterns=tuple(re.compile(p) for p in raw.get("host_path_patterns", ())),
            ))
        return cls(str(data["version"]), tuple(rules), tuple(data.get("tracking_params", ())))

    @classmethod
    def load(cls, path: str | Path) -> "RuleTable":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=1)
def default_rules() -> RuleTable:
    text = resources.files("osmeter.data").joinpath("host_rules.json").read_text(encoding="utf-8")
    return RuleTable.from_json(json.loads(text))


# -- extraction -------------------------------------------------------------------

_URL_RE = re.compile(r"https?://[^\s<>\"'`{}|\\^\[\]]+", re.IGNORECASE)
# soft hyphen or zero-width break, optionally followed by a line wrap
_SOFT_BREAK_RE = re.compile(r"[\u00ad\u200b]\s*")
_TRAILING = ".,;)]"


def dehyphenate(text: str) -> str:
    """Join URLs that a typesetter wrapped at a soft hyphen."""
    return _SOFT_BREAK_RE.sub("", text)


def _strip_trailing(url: str) -> str:
    while url and url[-1] in _TRAILING:
        if url[-1] == ")" and url.count("(") >= url.count(")"):
            break
        url = url[:-1]
    return url


def extract_urls(text: str) -> list[str]:
    """All http(s) URLs in ``text`` in order of appearance, duplicates kept."""
    out = []
    for m in _URL_RE.finditer(dehyphenate(text or "")):
        url = _strip_trailing(m.group(0))
        if len(url) > len("https://"):
            out.append(url)
    return out


# -- canonization -----------------------------------------------------------------

_DEFAULT_PORTS = {"http": 80, "https": 443}


def _is_known(host: str, table: RuleTable) -> bool:
    return any(host == d or host.endswith("." + d) for d in table.known_domains)


def _is_tracking(key: str, patterns: Sequence[str]) -> bool:
    key = unquote(key).lower()
    return any(fnmatch.fnmatchcase(key, p) for p in patterns)


def canonize_url_checked(url: str, rules: RuleTable | None = None) -> tuple[str, bool]:
    """Return ``(canonical, ok)``; ``ok`` is False when the URL could not be parsed."""
    table = rules or default_rules()
    raw = url.strip()
    try:
        parts = urlsplit(raw)
        port = parts.port
        host = parts.hostname
    except ValueError:
        return raw, False
    scheme = parts.scheme.lower()
    if scheme not in _DEFAULT_PORTS or not host:
        return raw, False

    host = host.rstrip(".")
    if _is_known(host, table) and scheme != "https":
        if port == _DEFAULT_PORTS[scheme]:
            port = None
        scheme = "https"
    if port == _DEFAULT_PORTS[scheme]:
        port = None

    userinfo = parts.netloc.rpartition("@")[0] if "@" in parts.netloc else ""
    netloc = f"[{host}]" if ":" in host else host
    if port is not None:
        netloc = f"{netloc}:{port}"
    if userinfo:
        netloc = f"{userinfo}@{netloc}"

    path = parts.path.rstrip("/") or "/"
    query = "&".join(
        seg for seg in parts.query.split("&")
        if seg and not _is_tracking(seg.split("=", 1)[0], table.tracking_params)
    )
    return urlunsplit((scheme, netloc, path, query, "")), True


def canonize_url(url: str, rules: RuleTable | None = None) -> str:
    """Canonical form used for deduplication.

    https for known hosts, lowercase host, default port dropped, path case kept,
    fragment and tracking parameters removed, trailing slash removed except at
    the root. Unparseable input comes back unchanged (stripped) and is logged.
    """
    canonical, ok = canonize_url_checked(url, rules)
    if not ok:
        log.info("could not canonize %r", url)
    return canonical


def classify_host(url: str, rules: RuleTable | None = None) -> HostCategory:
    table = rules or default_rules()
    try:
        parts = urlsplit(url)
        host = (parts.hostname or "").rstrip(".")
    except ValueError:
        return HostCategory.OTHER_WEB
    for rule in table.rules:
        if rule.matches(url, host, parts.path):
            return rule.category
    return HostCategory.OTHER_WEB


# -- liveness ---------------------------------------------------------------------

_CODE_MARKERS = ("readme", "repository files navigation", "/blob/", "/tree/", "commits",
                 "clone", ".py", "requirements.txt", "license", "source code")
_DATA_MARKERS = ("dataset", "download", ".csv", ".zip", "data files", "files (", "cite as",
                 "creative commons", "doi:", "data set", "version history")


@dataclass(frozen=True)
class LinkPolicy:
    timeout: float = 10.0
    retries: int = 2
    per_host_concurrency: int = 2
    global_concurrency: int = 16
    backoff: tuple[float, ...] = (1.0, 2.0)
    sniff_bytes: int = 200_000
    user_agent: str = "osmeter-linkcheck/0.1"


@dataclass(frozen=True)
class LinkCheck:
    liveness: Liveness
    content_kind_hint: ContentKind
    attempts: int
    status: int | None = None
    checked_at: str | None = None
    error: str | None = None


def content_hint(body: str) -> ContentKind:
    low = body.lower()
    code = sum(m in low for m in _CODE_MARKERS)
    data = sum(m in low for m in _DATA_MARKERS)
    if code >= 2 and data >= 2:
        return ContentKind.MIXED
    if code >= 2:
        return ContentKind.CODE
    if data >= 2:
        return ContentKind.DATA
    return ContentKind.UNKNOWN


def _is_dns_failure(exc: BaseException) -> bool:
    seen = set()
    stack: list[BaseException | None] = [exc]
    while stack:
        e = stack.pop()
        if e is None or id(e) in seen:
            continue
        seen.add(id(e))
        if isinstance(e, socket.gaierror):
            return True
        name = type(e).__name__
        if name == "NameResolutionError" or "Name or service not known" in str(e) \
                or "Failed to resolve" in str(e) or "nodename nor servname" in str(e):
            return True
        stack.extend([e.__cause__, e.__context__, *[a for a in e.args if isinstance(a, BaseException)]])
        reason = getattr(e, "reason", None)
        if isinstance(reason, BaseException):
            stack.append(reason)
    return False


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).replace(microsecond=0).isoformat()


def validate_link(
    url: str,
    policy: LinkPolicy | None = None,
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> LinkCheck:
    """Probe ``url`` with HEAD (GET on 403/405) and classify the outcome.

    2xx/3xx is live, 404/410 dead, DNS failure dead, TLS failure unknown.
    Timeouts, connection errors, 429 and 5xx are retried ``policy.retries``
    times; if they persist the link is unknown.
    """
    policy = policy or LinkPolicy()
    http = session or requests.Session()
    headers = {"User-Agent": policy.user_agent}
    attempts = 0
    last_status: int | None = None
    last_error: str | None = None
    for attempt in range(policy.retries + 1):
        if attempt:
            sleep(policy.backoff[min(attempt - 1, len(policy.backoff) - 1)] if policy.backoff else 0.0)
        attempts += 1
        body = None
        try:
            resp = http.head(url, timeout=policy.timeout, allow_redirects=True, headers=headers)
            if resp.status_code in (403, 405):
                resp = http.get(url, timeout=policy.timeout, allow_redirects=True,
                                headers=headers, stream=True)
                body = resp.raw.read(policy.sniff_bytes, decode_content=True) if resp.raw else b""
                resp.close()
        except requests.exceptions.SSLError as exc:
            return LinkCheck(Liveness.UNKNOWN, ContentKind.UNKNOWN, attempts, None, _now(), repr(exc))
        except requests.exceptions.Timeout as exc:
            last_error = repr(exc)
            log.info("attempt %d for %s timed out", attempts, url)
            continue
        except requests.exceptions.ConnectionError as exc:
            if _is_dns_failure(exc):
                return LinkCheck(Liveness.DEAD, ContentKind.UNKNOWN, attempts, None, _now(), repr(exc))
            last_error = repr(exc)
            log.info("attempt %d for %s failed: %s", attempts, url, exc)
            continue
        except requests.exceptions.RequestException as exc:
            return LinkCheck(Liveness.UNKNOWN, ContentKind.UNKNOWN, attempts, None, _now(), repr(exc))

        status = resp.status_code
        last_status = status
        if 200 <= status < 400:
            hint = ContentKind.UNKNOWN
            if body is None and policy.sniff_bytes:
                body = _sniff(http, url, policy, headers)
            if body:
                hint = content_hint(body.decode("utf-8", errors="replace"))
            return LinkCheck(Liveness.LIVE, hint, attempts, status, _now())
        if status in (404, 410):
            return LinkCheck(Liveness.DEAD, ContentKind.UNKNOWN, attempts, status, _now())
        if status >= 500 or status == 429:
            log.info("attempt %d for %s returned %d", attempts, url, status)
            continue
        return LinkCheck(Liveness.UNKNOWN, ContentKind.UNKNOWN, attempts, status, _now())
    return LinkCheck(Liveness.UNKNOWN, ContentKind.UNKNOWN, attempts, last_status, _now(), last_error)


def _sniff(http: requests.Session, url: str, policy: LinkPolicy, headers: dict) -> bytes | None:
    """Read the start of the landing page for content markers; failures are ignored."""
    try:
        resp = http.get(url, timeout=policy.timeout, allow_redirects=True, headers=headers, stream=True)
        try:
            if "html" not in resp.headers.get("Content-Type", "html"):
                return None
            return resp.raw.read(policy.sniff_bytes, decode_content=True)
        finally:
            resp.close()
    except requests.exceptions.RequestException:
        return None


def validate_links(
    urls: Iterable[str],
    policy: LinkPolicy | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> dict[str, LinkCheck]:
    """Check many URLs on a bounded pool with a per-host concurrency cap."""
    policy = policy or LinkPolicy()
    unique = list(dict.fromkeys(urls))
    host_locks: dict[str, threading.BoundedSemaphore] = defaultdict(
        lambda: threading.BoundedSemaphore(policy.per_host_concurrency))
    guard = threading.Lock()
    local = threading.local()

    def run(url: str) -> LinkCheck:
        host = (urlsplit(url).hostname or "").lower()
        with guard:
            sem = host_locks[host]
        if not hasattr(local, "session"):
            local.session = requests.Session()
        with sem:
            return validate_link(url, policy, local.session, sleep)

    with ThreadPoolExecutor(max_workers=max(1, policy.global_concurrency)) as pool:
        results = list(pool.map(run, unique))
    return dict(zip(unique, results))


# -- per-paper audit ----------------------------------------------------------------


@dataclass(frozen=True)
class LinkRecord:
    doi: str
    raw_url: str
    canonical_url: str
    host_category: HostCategory
    liveness: Liveness = Liveness.UNCHECKED
    content_kind_hint: ContentKind = ContentKind.UNKNOWN
    checked_at: str | None = None

    def row(self) -> dict[str, str]:
        return {
            "doi": self.doi,
            "raw_url": self.raw_url,
            "canonical_url": self.canonical_url,
            "host_category": self.host_category.value,
            "liveness": self.liveness.value,
            "content_kind_hint": self.content_kind_hint.value,
            "checked_at": self.checked_at or "",
        }


@dataclass
class LinkAudit:
    records: list[LinkRecord]
    counts: dict[str, int] = field(default_factory=dict)


def empty_counts() -> dict[str, int]:
    counts = {c.count_column: 0 for c in HostCategory}
    counts["n_code_links"] = 0
    counts["n_open_repo"] = 0
    return counts


def audit_paper_links(
    record,
    features=None,
    checks: Mapping[str, LinkCheck] | None = None,
    rules: RuleTable | None = None,
) -> LinkAudit:
    """Link records and per-category counts for one paper.

    URLs come from the body text plus the feature link lists, are canonized and
    deduplicated on the canonical form. ``checks`` maps canonical URLs to
    liveness results; URLs absent from it stay ``unchecked``.
    """
    raw_urls = extract_urls(record.body_text)
    code_links = list(getattr(features, "code_links", None) or ())
    data_links = list(getattr(features, "data_links", None) or ())
    raw_urls += [u for u in code_links + data_links if u]

    by_canonical: dict[str, LinkRecord] = {}
    for raw in raw_urls:
        canonical = canonize_url(raw, rules)
        if canonical in by_canonical:
            continue
        check = (checks or {}).get(canonical)
        by_canonical[canonical] = LinkRecord(
            doi=record.doi,
            raw_url=raw.strip(),
            canonical_url=canonical,
            host_category=classify_host(canonical, rules),
            liveness=check.liveness if check else Liveness.UNCHECKED,
            content_kind_hint=check.content_kind_hint if check else ContentKind.UNKNOWN,
            checked_at=check.checked_at if check else None,
        )
    records = [by_canonical[k] for k in sorted(by_canonical)]
    return LinkAudit(records, count_links(records, code_links, rules))


def count_links(records: Iterable[LinkRecord], code_links: Iterable[str] = (),
                rules: RuleTable | None = None) -> dict[str, int]:
    """Per-category counts for one paper's link records.

    ``n_code_links`` counts distinct canonical URLs that sit on a code host or
    were reported as code links by extraction.
    """
    records = list(records)
    counts = empty_counts()
    for rec in records:
        counts[rec.host_category.count_column] += 1
    code_set = {canonize_url(u, rules) for u in code_links if u}
    code_set |= {r.canonical_url for r in records if r.host_category is HostCategory.CODE_HOST}
    counts["n_code_links"] = len(code_set)
    counts["n_open_repo"] = counts[HostCategory.OPEN_REPO_DOI.count_column]
    return counts


def write_links_csv(records: Iterable[LinkRecord], path: str | Path) -> None:
    rows = sorted((r.row() for r in records), key=lambda r: (r["doi"], r["canonical_url"]))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LINK_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_links_csv(path: str | Path) -> list[LinkRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            LinkRecord(
                doi=row["doi"],
                raw_url=row["raw_url"],
                canonical_url=row["canonical_url"],
                host_category=HostCategory(row["host_category"]),
                liveness=Liveness(row["liveness"]),
                content_kind_hint=ContentKind(row["content_kind_hint"]),
                checked_at=row["checked_at"] or None,
            )
            for row in csv.DictReader(fh)
        ]
