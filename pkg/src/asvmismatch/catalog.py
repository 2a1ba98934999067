"""Acoustic feature schema: features, summary statistics and feature groups.

Every summary column is identified by a ``(feature, stat)`` pair and is
labelled ``<feature>_<stat>`` in files and reports (``F0_mean``,
``H1-A3_std``).  Column order is catalog order: features in declaration
order, ``mean`` before ``std``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from asvmismatch.errors import CatalogError


class StatKind(str, enum.Enum):
    MEAN = "mean"
    STD = "std"


@dataclass(frozen=True)
class Feature:
    name: str
    unit: str = ""


@dataclass(frozen=True, order=True)
class Column:
    feature: str
    stat: StatKind

    @property
    def label(self) -> str:
        return f"{self.feature}_{self.stat.value}"

    @classmethod
    def parse(cls, text: str) -> "Column":
        """Parse ``"<feature>:<mean|std>"``."""
        feature, sep, stat = text.rpartition(":")
        if not sep or not feature:
            raise CatalogError(f"malformed group member {text!r}; expected '<feature>:<mean|std>'")
        try:
            return cls(feature, StatKind(stat.strip().lower()))
        except ValueError:
            raise CatalogError(f"unknown statistic {stat!r} in group member {text!r}") from None


@dataclass(frozen=True)
class Group:
    name: str
    members: tuple[Column, ...]

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class FeatureCatalog:
    features: tuple[Feature, ...]
    groups: tuple[Group, ...]

    def __post_init__(self):
        _validate(self.features, self.groups)

    @property
    def columns(self) -> tuple[Column, ...]:
        return tuple(Column(f.name, s) for f in self.features for s in StatKind)

    @property
    def column_labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.columns)

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def group(self, name: str) -> Group:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def to_document(self) -> dict[str, Any]:
        return {
            "features": [{"name": f.name, "unit": f.unit} for f in self.features],
            "groups": [
                {"name": g.name, "members": [f"{c.feature}:{c.stat.value}" for c in g.members]}
                for g in self.groups
            ],
        }


def _validate(features: Iterable[Feature], groups: Iterable[Group]) -> None:
    features = tuple(features)
    if not features:
        raise CatalogError("empty catalog")
    names = [f.name for f in features]
    seen: set[str] = set()
    for name in names:
        if not name or not isinstance(name, str):
            raise CatalogError(f"invalid feature name {name!r}")
        if name in seen:
            raise CatalogError(f"duplicate feature name {name!r}")
        seen.add(name)

    labels = {f"{n}_{s.value}" for n in names for s in StatKind}
    owner: dict[Column, str] = {}
    group_names: set[str] = set()
    for g in groups:
        if g.name in group_names:
            raise CatalogError(f"duplicate group name {g.name!r}")
        if g.name in labels:
            raise CatalogError(f"group name {g.name!r} collides with a column label")
        group_names.add(g.name)
        if not g.members:
            raise CatalogError(f"empty group {g.name!r}")
        for col in g.members:
            if col.feature not in seen:
                raise CatalogError(f"group {g.name!r} references unknown feature {col.feature!r}")
            if col in owner:
                raise CatalogError(
                    f"duplicate group membership: {col.label} in {owner[col]!r} and {g.name!r}"
                )
            owner[col] = g.name


def _both(*features: str) -> tuple[Column, ...]:
    return tuple(Column(f, s) for f in features for s in StatKind)


_DEFAULT_FEATURES = (
    Feature("F0", "semitones"),
    Feature("Loudness", "sone"),
    Feature("Jitter", "relative"),
    Feature("Shimmer", "dB"),
    Feature("HNR", "dB"),
    Feature("H1-H2", "dB"),
    Feature("H1-A3", "dB"),
    Feature("F1", "Hz"),
    Feature("F2", "Hz"),
    Feature("F3", "Hz"),
    Feature("F4", "Hz"),
    Feature("B1", "Hz"),
    Feature("B2", "Hz"),
    Feature("B3", "Hz"),
    Feature("B4", "Hz"),
    Feature("A1", "dB"),
    Feature("A2", "dB"),
    Feature("A3", "dB"),
    Feature("A4", "dB"),
    Feature("SpectralFlux", ""),
    Feature("VoicedSegPerSec", "1/s"),
    Feature("VoicedSegLength", "s"),
    Feature("UnvoicedSegLength", "s"),
)

_DEFAULT_GROUPS = (
    Group("F0", _both("F0")),
    Group("VQ", _both("Loudness", "Jitter", "Shimmer", "HNR", "H1-H2", "H1-A3")),
    Group("Formant1", _both("F1", "B1", "A1")),
    Group("Formant2", _both("F2", "B2", "A2")),
    Group("Formant3", _both("F3", "B3", "A3")),
    Group("Formant4", _both("F4", "B4", "A4")),
    Group("SpectralFlux", _both("SpectralFlux")),
    Group("Temporal", _both("VoicedSegPerSec", "VoicedSegLength", "UnvoicedSegLength")),
)

_DEFAULT = FeatureCatalog(_DEFAULT_FEATURES, _DEFAULT_GROUPS)


def default_catalog() -> FeatureCatalog:
    """The 23-feature catalog with its 8 feature groups."""
    return _DEFAULT


def catalog_from_mapping(doc: Mapping[str, Any]) -> FeatureCatalog:
    if not isinstance(doc, Mapping):
        raise CatalogError("catalog document must be a mapping with 'features' and 'groups'")
    raw_features = doc.get("features") or []
    features = []
    for item in raw_features:
        if isinstance(item, str):
            features.append(Feature(item))
        elif isinstance(item, Mapping) and "name" in item:
            features.append(Feature(str(item["name"]), str(item.get("unit", "") or "")))
        else:
            raise CatalogError(f"malformed feature entry {item!r}")
    groups = []
    for item in doc.get("groups") or []:
        if not isinstance(item, Mapping) or "name" not in item:
            raise CatalogError(f"malformed group entry {item!r}")
        members = tuple(Column.parse(str(m)) for m in item.get("members") or [])
        groups.append(Group(str(item["name"]), members))
    return FeatureCatalog(tuple(features), tuple(groups))


def load_custom_catalog(config_document: str) -> FeatureCatalog:
    """Build a catalog from YAML (or JSON) text.

    Schema::

        features: [{name: F0, unit: semitones}, ...]
        groups:   [{name: F0, members: ["F0:mean", "F0:std"]}, ...]
    """
    try:
        doc = yaml.safe_load(config_document)
    except yaml.YAMLError as exc:
        raise CatalogError(f"unparseable catalog document: {exc}") from None
    if doc is None:
        raise CatalogError("empty catalog")
    return catalog_from_mapping(doc)


def load_catalog_file(path: str | Path) -> FeatureCatalog:
    return load_custom_catalog(Path(path).read_text(encoding="utf-8"))
