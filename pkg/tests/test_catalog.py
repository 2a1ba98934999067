import pytest

from asvmismatch.catalog import (
    Column,
    StatKind,
    default_catalog,
    load_catalog_file,
    load_custom_catalog,
)
from asvmismatch.errors import CatalogError


def test_default_catalog_counts(catalog):
    assert len(catalog.features) == 23
    assert len(catalog.columns) == 46
    assert len(set(catalog.column_labels)) == 46


def test_default_group_sizes(catalog):
    sizes = {g.name: len(g) for g in catalog.groups}
    assert sizes == {"F0": 2, "VQ": 12, "Formant1": 6, "Formant2": 6, "Formant3": 6,
                     "Formant4": 6, "SpectralFlux": 2, "Temporal": 6}


def test_groups_partition_columns(catalog):
    members = [c for g in catalog.groups for c in g.members]
    assert len(members) == len(set(members)) == 46
    assert set(members) == set(catalog.columns)


def test_formant_groups_are_per_formant(catalog):
    assert {c.feature for c in catalog.group("Formant3").members} == {"F3", "B3", "A3"}


def test_default_catalog_deterministic():
    assert default_catalog() == default_catalog()
    assert default_catalog().to_document() == default_catalog().to_document()


def test_f0_unit_is_semitones(catalog):
    assert catalog.feature("F0").unit == "semitones"


def test_column_labels_and_parse():
    c = Column.parse("H1-A3:std")
    assert c == Column("H1-A3", StatKind.STD)
    assert c.label == "H1-A3_std"
    with pytest.raises(CatalogError):
        Column.parse("F0")
    with pytest.raises(CatalogError):
        Column.parse("F0:median")


def test_custom_catalog_valid():
    doc = """
features:
  - {name: pitch, unit: st}
  - {name: energy, unit: dB}
groups:
  - name: all
    members: ["pitch:mean", "pitch:std", "energy:mean", "energy:std"]
"""
    cat = load_custom_catalog(doc)
    assert [f.name for f in cat.features] == ["pitch", "energy"]
    assert len(cat.groups) == 1 and len(cat.groups[0]) == 4
    assert cat.column_labels == ("pitch_mean", "pitch_std", "energy_mean", "energy_std")


def test_custom_catalog_duplicate_membership():
    doc = {"features": [{"name": "F0"}],
           "groups": [{"name": "a", "members": ["F0:mean"]}, {"name": "b", "members": ["F0:mean"]}]}
    import json
    with pytest.raises(CatalogError, match="duplicate group membership"):
        load_custom_catalog(json.dumps(doc))


@pytest.mark.parametrize("doc, msg", [
    ("features: []\ngroups: []", "empty catalog"),
    ("", "empty catalog"),
    ("features: [a, a]", "duplicate feature"),
    ("features: [a]\ngroups: [{name: g, members: []}]", "empty group"),
    ("features: [a]\ngroups: [{name: g, members: ['b:mean']}]", "unknown feature"),
    ("features: [a]\ngroups: [{name: a_mean, members: ['a:mean']}]", "collides"),
])
def test_custom_catalog_errors(doc, msg):
    with pytest.raises(CatalogError, match=msg):
        load_custom_catalog(doc)


def test_catalog_document_round_trip(tmp_path, catalog):
    import yaml
    path = tmp_path / "cat.yaml"
    path.write_text(yaml.safe_dump(catalog.to_document()))
    assert load_catalog_file(path) == catalog
