"""Country to world-region lookup backed by the bundled ``data/countries.csv``.

The table lists every UN member state plus a handful of frequently seen
territories. Regions follow continents, so Central America and the Caribbean
map to ``NorthAmerica`` and the Middle East maps to ``Asia``.
"""

from __future__ import annotations

import csv
import enum
import unicodedata
from functools import lru_cache
from importlib import resources


class Region(str, enum.Enum):
    AFRICA = "Africa"
    ASIA = "Asia"
    EUROPE = "Europe"
    NORTH_AMERICA = "NorthAmerica"
    OCEANIA = "Oceania"
    SOUTH_AMERICA = "SouthAmerica"
    UNKNOWN = "Unknown"

    @property
    def column(self) -> str:
        """One-hot column name used in the paper table, e.g. ``is_region_north_america``."""
        snake = {
            "NorthAmerica": "north_america",
            "SouthAmerica": "south_america",
        }.get(self.value, self.value.lower())
        return f"is_region_{snake}"


KNOWN_REGIONS = tuple(r for r in Region if r is not Region.UNKNOWN)


def _key(text: str) -> str:
    folded = unicodedata.normalize("NFKD", text)
    folded = "".join(c for c in folded if not unicodedata.combining(c))
    return " ".join(folded.casefold().replace(".", "").split())


@lru_cache(maxsize=1)
def _table() -> dict[str, Region]:
    lookup: dict[str, Region] = {}
    with resources.files("osmeter.data").joinpath("countries.csv").open(encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            region = Region(row["region"])
            names = [row["name"], *filter(None, row["aliases"].split("|"))]
            for name in names:
                lookup[_key(name)] = region
            # iso codes live in their own namespace so "IN" never collides with a word
            lookup["iso:" + row["iso2"].upper()] = region
    return lookup


def normalize_region(country: str | None) -> Region:
    """Map a country name or ISO 3166 alpha-2 code to its world region.

    Unmapped or empty input gives ``Region.UNKNOWN``; the function never raises.
    """
    if not country or not str(country).strip():
        return Region.UNKNOWN
    text = str(country).strip()
    table = _table()
    if len(text) == 2 and text.isalpha() and text.isupper():
        hit = table.get("iso:" + text)
        if hit is not None:
            return hit
    return table.get(_key(text), Region.UNKNOWN)
