"""Declarative logit specifications loaded from YAML."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

TRANSFORMS = ("identity", "center", "one_hot", "missing_indicator", "combine")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    """One explanatory variable and the utilities it enters.

    ``combine`` ORs either several levels of ``variable`` (``levels``) or
    several boolean columns (``columns``) into one indicator. ``one_hot``
    drops the most frequent level unless ``reference`` is given.
    An empty ``alternatives`` tuple means every non-reference alternative.
    """

    name: str
    variable: str = ""
    transform: str = "identity"
    alternatives: tuple[str, ...] = ()
    levels: tuple[str, ...] = ()
    columns: tuple[str, ...] = ()
    reference: str | None = None


@dataclass(frozen=True)
class EqualityRestriction:
    """(column, alternative) pairs that share a single coefficient."""

    members: tuple[tuple[str, str], ...]
    name: str = ""


@dataclass(frozen=True)
class ModelSpec:
    outcome: str
    alternatives: tuple[str, ...]
    reference: str
    terms: tuple[Term, ...] = ()
    equality: tuple[EqualityRestriction, ...] = ()
    constants: bool = True
    # estimation sample: keep rows whose value in column is one of the listed values
    sample: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.reference not in self.alternatives:
            raise SpecError(f"reference {self.reference!r} is not an alternative")
        if len(self.alternatives) < 2:
            raise SpecError("a choice model needs at least two alternatives")
        if len(set(self.alternatives)) != len(self.alternatives):
            raise SpecError("alternatives must be unique")
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise SpecError("term names must be unique")
        for term in self.terms:
            if term.transform not in TRANSFORMS:
                raise SpecError(f"term {term.name!r}: unknown transform {term.transform!r}")
            for alt in term.alternatives:
                if alt == self.reference:
                    raise SpecError(f"term {term.name!r} is attached to the reference alternative")
                if alt not in self.alternatives:
                    raise SpecError(f"term {term.name!r}: unknown alternative {alt!r}")
        seen: set[tuple[str, str]] = set()
        for eq in self.equality:
            if len(eq.members) < 2:
                raise SpecError("an equality restriction needs at least two members")
            for member in eq.members:
                if member[1] == self.reference:
                    raise SpecError(f"equality restriction {member} references the reference alternative")
                if member in seen:
                    raise SpecError(f"{member} appears in more than one equality restriction")
                seen.add(member)

    @property
    def non_reference(self) -> tuple[str, ...]:
        return tuple(a for a in self.alternatives if a != self.reference)

    def attached(self, term: Term) -> tuple[str, ...]:
        return term.alternatives or self.non_reference


def _as_tuple(value: Any) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, (str, int)):
        return (str(value),)
    return tuple(str(v) for v in value)


def spec_from_mapping(data: Mapping[str, Any]) -> ModelSpec:
    try:
        terms = []
        for raw in data.get("terms") or ():
            terms.append(Term(
                name=str(raw.get("name") or raw["variable"]),
                variable=str(raw.get("variable", "")),
                transform=str(raw.get("transform", "identity")).replace("-", "_"),
                alternatives=_as_tuple(raw.get("alternatives")),
                levels=_as_tuple(raw.get("levels")),
                columns=_as_tuple(raw.get("columns")),
                reference=None if raw.get("reference") is None else str(raw["reference"]),
            ))
        equality = []
        for raw in data.get("equality") or ():
            if isinstance(raw, Mapping):
                members, name = raw["members"], str(raw.get("name", ""))
            else:
                members, name = raw, ""
            equality.append(EqualityRestriction(tuple((str(c), str(a)) for c, a in members), name))
        sample = {str(k): _as_tuple(v) for k, v in (data.get("sample") or {}).items()}
        return ModelSpec(
            outcome=str(data["outcome"]),
            alternatives=_as_tuple(data["alternatives"]),
            reference=str(data["reference"]),
            terms=tuple(terms),
            equality=tuple(equality),
            constants=bool(data.get("constants", True)),
            sample=sample,
            name=str(data.get("name", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"malformed model spec: {exc!r}") from exc


def load_spec(path: str | Path) -> ModelSpec:
    with Path(path).open(encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, Mapping):
        raise SpecError(f"{path}: expected a mapping at the top level")
    return spec_from_mapping(data)


def bundled_spec(name: str) -> ModelSpec:
    """One of the spec files shipped with the package (``code_model`` or ``data_model``)."""
    from importlib import resources

    text = resources.files("osmeter.specs").joinpath(f"{name}.yaml").read_text(encoding="utf-8")
    return spec_from_mapping(yaml.safe_load(text))
