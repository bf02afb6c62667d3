"""Attribute catalogs: loading, ranking against the class name, selection.

A catalog is a JSON object mapping class names to lists of short visual
descriptors. It replaces the language-model query with an offline file; the
:class:`StubAttributeClient` keeps the seam where a live client would plug in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .embedcore import EncoderConfig, FrozenEncoder, token_matrix
from .errors import FormatError, InvalidArgumentError, MissingClassError, SchemaError


@dataclass(frozen=True)
class AttributeCatalog:
    entries: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        fixed = {}
        for name, attrs in self.entries.items():
            if not isinstance(name, str) or not name.strip():
                raise SchemaError("class names must be non-empty strings")
            attrs = tuple(attrs)
            if not attrs:
                raise SchemaError(f"class {name!r} has no attributes")
            for a in attrs:
                if not isinstance(a, str) or not a.strip():
                    raise SchemaError(f"class {name!r} has an empty or non-string attribute")
            fixed[name] = attrs
        object.__setattr__(self, "entries", fixed)

    @property
    def class_names(self) -> list[str]:
        return list(self.entries)

    def __getitem__(self, class_name: str) -> tuple[str, ...]:
        try:
            return self.entries[class_name]
        except KeyError:
            raise MissingClassError(f"class {class_name!r} is not in the catalog") from None

    def __contains__(self, class_name) -> bool:
        return class_name in self.entries

    def __len__(self):
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps({k: list(v) for k, v in self.entries.items()}, indent=2, ensure_ascii=False)


@dataclass(frozen=True)
class RankedAttributes:
    class_name: str
    ranked: tuple[tuple[str, float], ...]
    selected: tuple[str, ...]


class SourceMode(str, Enum):
    OFFLINE_CATALOG = "offline_catalog"
    CLIENT_STUB = "client_stub"


@dataclass(frozen=True)
class AttributeSourceConfig:
    mode: SourceMode = SourceMode.OFFLINE_CATALOG
    catalog_path: str | None = None
    top_m: int = 2

    def __post_init__(self):
        object.__setattr__(self, "mode", SourceMode(self.mode))
        if self.top_m < 1:
            raise InvalidArgumentError("top_m must be >= 1")
        if self.mode is SourceMode.OFFLINE_CATALOG and not self.catalog_path:
            raise InvalidArgumentError("offline_catalog mode needs catalog_path")


def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise SchemaError(f"duplicate class name {key!r}")
        out[key] = value
    return out


def parse_catalog(text: str, strict: bool = True, source: str = "<string>") -> AttributeCatalog:
    """Parse catalog JSON. Strict mode rejects top-level keys whose value is not an attribute list."""
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise FormatError(f"{source}: top level must be an object mapping class names to lists")
    entries = {}
    for key, value in data.items():
        if not isinstance(value, list):
            if strict:
                raise SchemaError(f"{source}: unknown top-level key {key!r} (value is not a list)")
            continue
        entries[key] = value
    try:
        return AttributeCatalog(entries)
    except SchemaError as exc:
        raise SchemaError(f"{source}: {exc}") from None


def load_catalog(path, strict: bool = True) -> AttributeCatalog:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read catalog {path}: {exc}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not valid UTF-8 at byte {exc.start}") from None
    return parse_catalog(text, strict=strict, source=str(path))


def text_embedding(text: str, encoder: FrozenEncoder, global_seed: int) -> np.ndarray:
    pooled = token_matrix(text, encoder.d_tok, global_seed).mean(axis=0)
    return encoder.encode_texts(pooled[None, :])[0]


def rank_attributes(
    class_name: str,
    attrs,
    encoder: FrozenEncoder | EncoderConfig,
    global_seed: int = 0,
    top_m: int = 2,
) -> RankedAttributes:
    """Rank attributes by cosine similarity to the class name; stable on ties."""
    attrs = list(attrs)
    if not attrs:
        raise InvalidArgumentError(f"no attributes to rank for {class_name!r}")
    if top_m < 1:
        raise InvalidArgumentError("top_m must be >= 1")
    if isinstance(encoder, EncoderConfig):
        encoder = FrozenEncoder.from_config(encoder)
    anchor = text_embedding(class_name, encoder, global_seed)
    scores = [
        float(np.clip(anchor @ text_embedding(a, encoder, global_seed), -1.0, 1.0)) for a in attrs
    ]
    order = sorted(range(len(attrs)), key=lambda k: -scores[k])
    ranked = tuple((attrs[k], scores[k]) for k in order)
    return RankedAttributes(class_name, ranked, tuple(a for a, _ in ranked[:top_m]))


class StubAttributeClient:
    """Deterministic stand-in for a language-model client; logs every request."""

    DESCRIPTORS = ("distinctive shape", "typical color", "surface texture")

    def __init__(self):
        self.requests: list[str] = []

    def attributes_for(self, class_name: str) -> list[str]:
        self.requests.append(class_name)
        return [f"{d} of {class_name}" for d in self.DESCRIPTORS]


_default_stub = StubAttributeClient()


def fetch_attributes(
    class_name: str,
    cfg: AttributeSourceConfig,
    client: StubAttributeClient | None = None,
    catalog: AttributeCatalog | None = None,
) -> list[str]:
    """Raw, unranked attributes for one class from the configured source."""
    if cfg.mode is SourceMode.CLIENT_STUB:
        return (client or _default_stub).attributes_for(class_name)
    if catalog is None:
        catalog = load_catalog(cfg.catalog_path)
    return list(catalog[class_name])


_ADJECTIVES = (
    "red green blue striped spotted furry smooth long short round pointed curved bright "
    "dark pale glossy rough tiny large slender"
).split()
_NOUNS = (
    "tail fur ears beak wings legs eyes snout shell petals leaves stem body head feet "
    "claws mane horns fins scales"
).split()


def synthetic_catalog(n_classes: int, n_attributes: int = 3, seed: int = 0) -> AttributeCatalog:
    """Catalog of made-up classes, each with ``n_attributes`` adjective-noun descriptors."""
    if n_classes < 1 or n_attributes < 1:
        raise InvalidArgumentError("need at least one class and one attribute")
    rng = np.random.default_rng(seed)
    entries = {}
    for i in range(n_classes):
        entries[f"class{i} thing{i}"] = [
            f"{_ADJECTIVES[rng.integers(len(_ADJECTIVES))]} {_NOUNS[rng.integers(len(_NOUNS))]}"
            for _ in range(n_attributes)
        ]
    return AttributeCatalog(entries)
