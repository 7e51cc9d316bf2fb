"""Prompt templates stored as resource files under ``osmeter/templates``.

A template file starts with ``@key: value`` header lines, then a blank line,
then the prompt. The prompt contains a ``Schema:`` block whose
``"key": "type"`` lines define what a valid answer looks like, and a
``{{ARTICLE}}`` placeholder for the markdown-rendered article.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from osmeter.ingest import JOURNAL_NAMES, ArticleRecord

TEMPLATE_IDS = ("code", "data", "quant", "links")
PLACEHOLDER = "{{ARTICLE}}"
# keys echoed back for identification only; never merged into features
ECHO_KEYS = frozenset({"title"})

_FIELD_RE = re.compile(r'^\s*"(\w+)"\s*:\s*"(boolean|string|array)"', re.MULTILINE)


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    id: str
    version: str
    body: str
    fields: tuple[tuple[str, str], ...]
    reconstructed: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()[:10]

    @property
    def version_tag(self) -> str:
        """Version plus content hash; editing the prompt changes the cache key."""
        return f"v{self.version}-{self.digest}"

    @property
    def schema(self) -> dict[str, str]:
        return dict(self.fields)

    def render(self, article_markdown: str) -> str:
        return self.body.replace(PLACEHOLDER, article_markdown)


def parse_template(text: str) -> Template:
    header, _, body = text.partition("\n\n")
    meta = {}
    for line in header.splitlines():
        if line.startswith("@"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
    if PLACEHOLDER not in body:
        raise PromptError(f"template {meta.get('template')!r} has no {PLACEHOLDER} placeholder")
    fields = tuple(_FIELD_RE.findall(body))
    if not fields:
        raise PromptError(f"template {meta.get('template')!r} declares no schema fields")
    return Template(meta["template"], meta.get("version", "1"), body, fields,
                    meta.get("reconstructed", "none"))


@lru_cache(maxsize=None)
def load_template(template_id: str) -> Template:
    if template_id not in TEMPLATE_IDS:
        raise PromptError(f"unknown template id {template_id!r}")
    pkg = resources.files("osmeter.templates")
    matches = sorted(p.name for p in pkg.iterdir() if p.name.startswith(f"{template_id}.v"))
    if not matches:
        raise PromptError(f"no resource file for template {template_id!r}")
    # the highest version wins
    name = max(matches, key=lambda n: int(n.split(".v", 1)[1].split(".", 1)[0]))
    return parse_template(pkg.joinpath(name).read_text(encoding="utf-8"))


def article_markdown(record: ArticleRecord) -> str:
    parts = [f"# {record.title}", f"Journal: {JOURNAL_NAMES.get(record.journal, record.journal)}"]
    if record.abstract:
        parts.append("## Abstract\n\n" + record.abstract)
    if record.keywords:
        parts.append("## Keywords\n\n" + "; ".join(record.keywords))
    parts.append(record.body_text)
    if record.references_text:
        parts.append("## References\n\n" + record.references_text)
    return "\n\n".join(parts)


def build_prompt(record: ArticleRecord, template_id: str) -> str:
    template = load_template(template_id)
    if not record.body_text.strip():
        raise PromptError(f"{record.doi}: body text is empty")
    return template.render(article_markdown(record))
