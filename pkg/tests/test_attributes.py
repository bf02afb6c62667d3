import json

import numpy as np
import pytest

from tcalib.attributes import (
    AttributeSourceConfig,
    SourceMode,
    StubAttributeClient,
    fetch_attributes,
    load_catalog,
    parse_catalog,
    rank_attributes,
    synthetic_catalog,
    text_embedding,
)
from tcalib.embedcore import EncoderConfig, FrozenEncoder
from tcalib.errors import FormatError, InvalidArgumentError, MissingClassError, SchemaError

CFG = EncoderConfig(d_tok=64, d_embed=32, projection_seed=1)


def test_minimal_catalog(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"red panda": ["reddish-brown fur", "bushy ringed tail"]}')
    cat = load_catalog(path)
    assert cat.class_names == ["red panda"]
    assert cat["red panda"] == ("reddish-brown fur", "bushy ringed tail")


def test_duplicate_class_is_schema_error():
    with pytest.raises(SchemaError, match="cat"):
        parse_catalog('{"cat": ["a"], "cat": ["b"]}')


def test_hundred_class_catalog(tmp_path):
    entries = {f"category {i}": [f"feature {j} of {i}" for j in range(1 + i % 4)] for i in range(100)}
    path = tmp_path / "big.json"
    path.write_text(json.dumps(entries, indent=1))
    cat = load_catalog(path)
    assert len(cat) == 100
    assert all(len(cat[n]) >= 1 for n in cat.class_names)


def test_parse_errors_carry_position():
    with pytest.raises(FormatError, match="line 2"):
        parse_catalog('{"cat": ["a"],\n  "dog": [}')
    with pytest.raises(FormatError):
        parse_catalog('["cat"]')


def test_empty_attribute_list_names_class():
    with pytest.raises(SchemaError, match="dog"):
        parse_catalog('{"cat": ["a"], "dog": []}')


def test_strict_and_lenient_unknown_keys():
    text = '{"version": 2, "cat": ["whiskers"]}'
    with pytest.raises(SchemaError):
        parse_catalog(text)
    assert parse_catalog(text, strict=False).class_names == ["cat"]


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        load_catalog(tmp_path / "nope.json")


def test_class_name_ranks_first():
    r = rank_attributes("red panda", ["striped ocean", "red panda"], CFG)
    assert r.ranked[0][0] == "red panda"
    assert r.ranked[0][1] == pytest.approx(1.0, abs=1e-12)


def test_identical_attributes_keep_catalog_order():
    r = rank_attributes("cat", ["soft fur", "soft fur", "long tail"], CFG, top_m=3)
    names = [a for a, _ in r.ranked]
    first = names.index("soft fur")
    assert names[first + 1] == "soft fur"


@pytest.mark.parametrize("seed", range(5))
def test_ranking_matches_independent_sort(seed):
    rng = np.random.default_rng(seed)
    words = ["fur", "tail", "ears", "wings", "stripes", "spots", "beak", "claws"]
    attrs = [" ".join(rng.choice(words, size=2)) for _ in range(5)]
    enc = FrozenEncoder.from_config(CFG)
    anchor = text_embedding("snow leopard", enc, 0)
    scores = [float(np.dot(anchor, text_embedding(a, enc, 0))) for a in attrs]
    expected = [attrs[i] for i in sorted(range(5), key=lambda i: (-scores[i], i))]
    r = rank_attributes("snow leopard", attrs, CFG, top_m=3)
    assert [a for a, _ in r.ranked] == expected
    assert r.selected == tuple(expected[:3])


def test_ranking_properties():
    attrs = ["spotted coat", "long neck", "tiny horns", "brown patches", "tall legs"]
    r = rank_attributes("giraffe", attrs, CFG, top_m=2)
    assert r == rank_attributes("giraffe", attrs, CFG, top_m=2)
    shuffled = rank_attributes("giraffe", attrs[::-1], CFG, top_m=2)
    assert set(shuffled.selected) == set(r.selected)
    for k in range(1, 5):
        small = rank_attributes("giraffe", attrs, CFG, top_m=k).selected
        big = rank_attributes("giraffe", attrs, CFG, top_m=k + 1).selected
        assert big[:k] == small


def test_rank_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        rank_attributes("cat", [], CFG)


def test_fetch_offline(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"red panda": ["reddish-brown fur", "bushy ringed tail"]}')
    cfg = AttributeSourceConfig(SourceMode.OFFLINE_CATALOG, str(path))
    assert fetch_attributes("red panda", cfg) == ["reddish-brown fur", "bushy ringed tail"]
    with pytest.raises(MissingClassError):
        fetch_attributes("unicorn", cfg)


def test_fetch_stub_logs_requests():
    client = StubAttributeClient()
    cfg = AttributeSourceConfig(SourceMode.CLIENT_STUB)
    first = fetch_attributes("owl", cfg, client=client)
    assert fetch_attributes("owl", cfg, client=client) == first
    assert client.requests == ["owl", "owl"]


def test_synthetic_catalog_shape():
    cat = synthetic_catalog(10, 3, seed=2)
    assert len(cat) == 10
    assert all(len(cat[n]) == 3 for n in cat.class_names)
    assert cat.to_json() == synthetic_catalog(10, 3, seed=2).to_json()
    assert parse_catalog(cat.to_json()).class_names == cat.class_names
