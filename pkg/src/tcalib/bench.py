"""Synthetic zero-shot benchmarks and the binary feature-bundle format.

Bundle layout (all integers little-endian uint32, reals little-endian float32,
arrays row-major):

    magic      4 bytes  b"TCAF"
    version    u32      1
    dim        u32      feature width
    n_samples  u32
    n_classes  u32
    flags      u32      bit 0: class text features present
    names      n_classes x (u32 byte length + UTF-8 bytes)
    features   n_samples x dim float32
    labels     n_samples x u32
    text       n_classes x dim float32   (only if flag bit 0)

Nothing may follow the last section.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .attributes import AttributeCatalog, text_embedding
from .embedcore import normalize
from .errors import (
    CorruptionError,
    FormatError,
    InvalidArgumentError,
    MissingClassError,
    SchemaError,
    VersionError,
)
from .tuner import ZeroShotContext

MAGIC = b"TCAF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
_U32 = struct.Struct("<I")


class ShiftKind(str, Enum):
    NONE = "none"
    NOISE = "noise"
    ROTATION = "rotation"
    SKETCH = "sketch"


@dataclass(frozen=True)
class Shift:
    """Post-hoc distribution shift.

    ``amount`` is the extra per-coordinate noise sigma (noise), the largest
    plane-rotation angle in radians (rotation) or the fraction of coordinates
    whose sign is flipped (sketch).
    """

    kind: ShiftKind = ShiftKind.NONE
    amount: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ShiftKind(self.kind))
        if self.amount < 0:
            raise InvalidArgumentError("shift amount must be nonnegative")
        if self.kind is ShiftKind.SKETCH and self.amount > 1:
            raise InvalidArgumentError("sketch fraction must be <= 1")


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 10
    samples_per_class: int = 50
    d_raw: int = 32
    cluster_sigma: float = 0.35
    shift: Shift = Shift()
    seed: int = 0
    attribute_alignment: float = 0.6
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidArgumentError("need at least two classes")
        if self.samples_per_class < 1:
            raise InvalidArgumentError("samples_per_class must be >= 1")
        if self.cluster_sigma < 0:
            raise InvalidArgumentError("cluster_sigma must be nonnegative")
        if not 0.0 <= self.attribute_alignment <= 1.0:
            raise InvalidArgumentError("attribute_alignment must lie in [0, 1]")
        if isinstance(self.shift, dict):
            object.__setattr__(self, "shift", Shift(**self.shift))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
            if len(self.class_names) != self.n_classes:
                raise InvalidArgumentError("class_names length must equal n_classes")


@dataclass(frozen=True, eq=False)
class FeatureBundle:
    class_names: tuple[str, ...]
    image_features: np.ndarray
    true_labels: np.ndarray
    text_features: np.ndarray | None = None
    version: int = VERSION

    def __post_init__(self):
        feats = np.ascontiguousarray(self.image_features, dtype="<f4")
        raw_labels = np.asarray(self.true_labels)
        if raw_labels.size and raw_labels.min() < 0:
            raise SchemaError("labels must be nonnegative")
        labels = np.ascontiguousarray(raw_labels, dtype="<u4")
        names = tuple(self.class_names)
        if feats.ndim != 2 or labels.shape != (feats.shape[0],):
            raise SchemaError("features must be (n, d) with one label per row")
        if not np.all(np.isfinite(feats)):
            raise SchemaError("features must be finite")
        if labels.size and labels.max() >= len(names):
            raise SchemaError("label out of range")
        text = self.text_features
        if text is not None:
            text = np.ascontiguousarray(text, dtype="<f4")
            if text.shape != (len(names), feats.shape[1]) or not np.all(np.isfinite(text)):
                raise SchemaError("text features must be finite (n_classes, dim)")
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "image_features", feats)
        object.__setattr__(self, "true_labels", labels)
        object.__setattr__(self, "text_features", text)

    @property
    def n_samples(self) -> int:
        return self.image_features.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def d_embed(self) -> int:
        return self.image_features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureBundle):
            return NotImplemented
        same_text = (self.text_features is None and other.text_features is None) or (
            self.text_features is not None
            and other.text_features is not None
            and np.array_equal(self.text_features, other.text_features)
        )
        return (
            self.version == other.version
            and self.class_names == other.class_names
            and self.image_features.dtype == other.image_features.dtype
            and np.array_equal(self.image_features, other.image_features)
            and np.array_equal(self.true_labels, other.true_labels)
            and same_text
        )

    __hash__ = None


def _resolve_names(spec: SyntheticSpec, catalog: AttributeCatalog) -> tuple[str, ...]:
    if spec.class_names is not None:
        names = spec.class_names
    else:
        names = tuple(catalog.class_names[: spec.n_classes])
        if len(names) < spec.n_classes:
            raise MissingClassError(
                f"catalog has {len(names)} classes, synthetic spec needs {spec.n_classes}"
            )
    for n in names:
        catalog[n]
    return names


def class_prototypes(spec: SyntheticSpec, catalog: AttributeCatalog, ctx: ZeroShotContext) -> np.ndarray:
    """Unit raw-space prototypes, one row per class.

    In embedding space the prototype is a blend of a random direction and the
    mean text embedding of the class's attributes (each read as
    ``"<attribute> <class name>"``); it is mapped back to raw space through the
    pseudo-inverse of the image projection.
    """
    names = _resolve_names(spec, catalog)
    enc = ctx.encoder
    if enc.d_raw != spec.d_raw:
        raise InvalidArgumentError(f"encoder expects d_raw={enc.d_raw}, spec has {spec.d_raw}")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    back = np.linalg.pinv(enc.image_proj)
    protos = []
    for name in names:
        attr_mean = np.mean(
            [text_embedding(f"{a} {name}", enc, ctx.global_seed) for a in catalog[name]], axis=0
        )
        random_dir = normalize(rng.standard_normal(enc.d_embed))
        a = spec.attribute_alignment
        proto = normalize((1.0 - a) * random_dir + a * normalize(attr_mean))
        protos.append(normalize(back @ proto))
    return np.stack(protos)


def _rotation(d: int, budget: float, rng: np.random.Generator) -> np.ndarray:
    basis, r = np.linalg.qr(rng.standard_normal((d, d)))
    basis *= np.sign(np.diag(r))
    rot = np.eye(d)
    for p in range(d // 2):
        theta = budget * rng.uniform(-1.0, 1.0)
        c, s = np.cos(theta), np.sin(theta)
        i, j = 2 * p, 2 * p + 1
        rot[i, i], rot[i, j], rot[j, i], rot[j, j] = c, -s, s, c
    return basis @ rot @ basis.T


def apply_shift(features: np.ndarray, shift: Shift, rng: np.random.Generator) -> np.ndarray:
    x = np.array(features, dtype=np.float64)
    if shift.kind is ShiftKind.NOISE:
        x = x + shift.amount * rng.standard_normal(x.shape)
    elif shift.kind is ShiftKind.ROTATION:
        x = x @ _rotation(x.shape[1], shift.amount, rng).T
    elif shift.kind is ShiftKind.SKETCH:
        n_flip = int(round(shift.amount * x.shape[1]))
        flip = rng.permutation(x.shape[1])[:n_flip]
        x[:, flip] *= -1.0
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def generate(spec: SyntheticSpec, catalog: AttributeCatalog, ctx: ZeroShotContext) -> FeatureBundle:
    """Class-clustered raw features; sample = normalize(prototype + N(0, sigma^2 I))."""
    names = _resolve_names(spec, catalog)
    protos = class_prototypes(spec, catalog, ctx)
    sample_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    shift_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2]))
    labels = np.repeat(np.arange(spec.n_classes), spec.samples_per_class)
    x = protos[labels] + spec.cluster_sigma * sample_rng.standard_normal((labels.size, spec.d_raw))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    x = x / np.where(norms > 0, norms, 1.0)
    if spec.shift.kind is not ShiftKind.NONE:
        x = apply_shift(x, spec.shift, shift_rng)
    return FeatureBundle(names, x, labels)


def encode_bundle(bundle: FeatureBundle) -> bytes:
    flags = 1 if bundle.text_features is not None else 0
    parts = [_HEADER.pack(MAGIC, bundle.version, bundle.d_embed, bundle.n_samples, bundle.n_classes, flags)]
    for name in bundle.class_names:
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    parts.append(bundle.image_features.astype("<f4").tobytes(order="C"))
    parts.append(bundle.true_labels.astype("<u4").tobytes(order="C"))
    if flags:
        parts.append(bundle.text_features.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def decode_bundle(data: bytes) -> FeatureBundle:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic tag {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise CorruptionError("header truncated", len(data))
    _, version, dim, n, k, flags = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise VersionError(f"bundle version {version} is not supported (expected {VERSION})")
    if flags & ~1:
        raise FormatError(f"unknown flag bits {flags:#x}")
    pos = _HEADER.size

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(data):
            raise CorruptionError(f"truncated while reading {what}", pos)
        chunk = data[pos:pos + nbytes]
        pos += nbytes
        return chunk

    names = []
    for i in range(k):
        (length,) = _U32.unpack(take(4, f"length of class name {i}"))
        try:
            names.append(take(length, f"class name {i}").decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError(f"class name {i} is not valid UTF-8") from None
    feats = np.frombuffer(take(4 * n * dim, "image features"), dtype="<f4").reshape(n, dim)
    labels = np.frombuffer(take(4 * n, "labels"), dtype="<u4")
    text = None
    if flags & 1:
        text = np.frombuffer(take(4 * k * dim, "text features"), dtype="<f4").reshape(k, dim)
    if pos != len(data):
        raise CorruptionError(f"{len(data) - pos} trailing bytes", pos)
    return FeatureBundle(tuple(names), feats.copy(), labels.copy(), None if text is None else text.copy(), version)


def write_bundle(bundle: FeatureBundle, path) -> None:
    Path(path).write_bytes(encode_bundle(bundle))


def read_bundle(path) -> FeatureBundle:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read bundle {path}: {exc}") from None
    return decode_bundle(data)
