"""Deterministic vector math and the toy frozen encoders.

Everything here stands in for a frozen vision-language model: tokens are
hash-seeded Gaussian directions, the text encoder mean-pools token vectors and
applies a fixed projection, and the image encoder is a fixed projection of a
raw feature vector. All functions are pure given their inputs and seeds.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

_MASK64 = (1 << 64) - 1
NORM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """A finite real vector, optionally tagged as unit-norm."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidArgumentError("embedding must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("embedding has non-finite entries")
        if self.normalized and abs(np.linalg.norm(arr) - 1.0) > NORM_TOL:
            raise InvalidArgumentError("vector tagged normalized is not unit-norm")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.dim

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.normalized == other.normalized and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class TokenEmbedding:
    token_text: str
    vector: EmbeddingVector
    frozen: bool = True


@dataclass(frozen=True)
class EncoderConfig:
    d_tok: int = 64
    d_embed: int = 32
    projection_seed: int = 0
    use_identity_projection: bool = False
    # input width of the image encoder; None means d_embed
    d_raw: int | None = None

    def __post_init__(self):
        if self.d_tok < 2 or self.d_embed < 1:
            raise InvalidArgumentError("d_tok must be >= 2 and d_embed >= 1")
        if self.use_identity_projection and (
            self.d_embed > self.d_tok or self.d_embed > self.raw_dim
        ):
            raise InvalidArgumentError("identity projection needs d_embed <= d_tok and d_raw")
        if self.raw_dim < 1:
            raise InvalidArgumentError("d_raw must be positive")

    @property
    def raw_dim(self) -> int:
        return self.d_embed if self.d_raw is None else self.d_raw


@dataclass(frozen=True)
class AugmentationConfig:
    n_views: int = 64
    noise_sigma: float = 0.02
    dropout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_views < 1:
            raise InvalidArgumentError("n_views must be >= 1")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be nonnegative")
        if not 0.0 <= self.dropout_fraction < 1.0:
            raise InvalidArgumentError("dropout_fraction must lie in [0, 1)")


def _as_array(v) -> np.ndarray:
    return np.asarray(v.values if isinstance(v, EmbeddingVector) else v, dtype=np.float64)


def stable_hash64(text: str) -> int:
    """64-bit BLAKE2b digest of the UTF-8 text (stable across processes)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def normalize(v) -> np.ndarray:
    arr = _as_array(v)
    n = np.linalg.norm(arr)
    if not np.isfinite(n) or n == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return arr / n


@lru_cache(maxsize=65536)
def _token_values(token_text: str, d_tok: int, global_seed: int) -> np.ndarray:
    key = stable_hash64(token_text) ^ (global_seed & _MASK64)
    rng = np.random.Generator(np.random.Philox(key=key))
    v = rng.standard_normal(d_tok)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def embed_token(token_text: str, d_tok: int, global_seed: int) -> EmbeddingVector:
    """Unit vector for a token string, a pure function of (text, d_tok, seed)."""
    if not token_text:
        raise InvalidArgumentError("token text must be non-empty")
    if d_tok < 2:
        raise InvalidArgumentError("d_tok must be >= 2")
    return EmbeddingVector(_token_values(token_text, d_tok, global_seed), normalized=True)


def tokenize(text: str) -> list[str]:
    words = text.split()
    if not words:
        raise InvalidArgumentError(f"text {text!r} has no tokens")
    return words


def token_matrix(text: str, d_tok: int, global_seed: int) -> np.ndarray:
    """Stacked token vectors of a whitespace-tokenized string, shape (L, d_tok)."""
    return np.stack([_token_values(w, d_tok, global_seed) for w in tokenize(text)])


def _orthonormal_rows(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((cols, cols))
    q, r = np.linalg.qr(g)
    q *= np.sign(np.diag(r))
    return q[:rows].copy()


class FrozenEncoder:
    """Fixed text and image projections.

    ``text_proj`` maps pooled token vectors (d_tok) to the joint embedding
    space; ``image_proj`` maps raw image features (d_raw) to the same space.
    """

    def __init__(self, text_proj, image_proj):
        text_proj = np.array(text_proj, dtype=np.float64)
        image_proj = np.array(image_proj, dtype=np.float64)
        if text_proj.shape[0] != image_proj.shape[0]:
            raise InvalidArgumentError("text and image projections disagree on d_embed")
        text_proj.setflags(write=False)
        image_proj.setflags(write=False)
        self.text_proj = text_proj
        self.image_proj = image_proj

    @classmethod
    def from_config(cls, cfg: EncoderConfig) -> "FrozenEncoder":
        return _encoder_for(cfg)

    @property
    def d_embed(self) -> int:
        return self.text_proj.shape[0]

    @property
    def d_tok(self) -> int:
        return self.text_proj.shape[1]

    @property
    def d_raw(self) -> int:
        return self.image_proj.shape[1]

    def conjugated(self, q) -> "FrozenEncoder":
        """Encoder whose outputs are rotated by the orthogonal matrix ``q``."""
        q = np.asarray(q, dtype=np.float64)
        return FrozenEncoder(q @ self.text_proj, q @ self.image_proj)

    def encode_text(self, tokens: Sequence) -> EmbeddingVector:
        mat = _token_stack(tokens, self.d_tok)
        z = self.text_proj @ mat.mean(axis=0)
        try:
            return EmbeddingVector(normalize(z), normalized=True)
        except DegenerateInputError:
            raise DegenerateInputError("pooled token vectors project to zero") from None

    def encode_text_jacobian(self, tokens: Sequence) -> np.ndarray:
        """d encode_text / d token_k; identical for every position k under mean pooling."""
        mat = _token_stack(tokens, self.d_tok)
        z = self.text_proj @ mat.mean(axis=0)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            raise DegenerateInputError("pooled token vectors project to zero")
        e = z / nz
        return (np.eye(len(e)) - np.outer(e, e)) @ self.text_proj / (nz * mat.shape[0])

    def encode_texts(self, pooled: np.ndarray) -> np.ndarray:
        """Batch path: rows of mean-pooled token vectors -> unit embeddings."""
        z = pooled @ self.text_proj.T
        n = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.any(n == 0.0):
            raise DegenerateInputError("pooled token vectors project to zero")
        return z / n

    def encode_image(self, raw_feature) -> EmbeddingVector:
        arr = _as_array(raw_feature)
        if arr.shape != (self.d_raw,):
            raise InvalidArgumentError(f"raw feature must have dim {self.d_raw}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("raw feature has non-finite entries")
        try:
            return EmbeddingVector(normalize(self.image_proj @ arr), normalized=True)
        except DegenerateInputError:
            raise DegenerateInputError("image feature projects to zero") from None

    def encode_images(self, raw: np.ndarray) -> np.ndarray:
        z = np.asarray(raw, dtype=np.float64) @ self.image_proj.T
        n = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.any(n == 0.0):
            raise DegenerateInputError("image feature projects to zero")
        return z / n


@lru_cache(maxsize=64)
def _encoder_for(cfg: EncoderConfig) -> FrozenEncoder:
    if cfg.use_identity_projection:
        return FrozenEncoder(np.eye(cfg.d_embed, cfg.d_tok), np.eye(cfg.d_embed, cfg.raw_dim))
    ss = np.random.SeedSequence(cfg.projection_seed)
    text_rng, image_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    text_proj = _orthonormal_rows(cfg.d_embed, cfg.d_tok, text_rng)
    if cfg.raw_dim >= cfg.d_embed:
        image_proj = _orthonormal_rows(cfg.d_embed, cfg.raw_dim, image_rng)
    else:
        image_proj = _orthonormal_rows(cfg.raw_dim, cfg.d_embed, image_rng).T
    return FrozenEncoder(text_proj, image_proj)


def _token_stack(tokens: Sequence, d_tok: int) -> np.ndarray:
    if len(tokens) == 0:
        raise InvalidArgumentError("token sequence must be non-empty")
    rows = []
    for t in tokens:
        v = t.vector if isinstance(t, TokenEmbedding) else t
        arr = _as_array(v)
        if arr.shape != (d_tok,):
            raise InvalidArgumentError(f"token dim {arr.shape} does not match d_tok={d_tok}")
        rows.append(arr)
    return np.stack(rows)


def encode_text(tokens: Sequence, cfg: EncoderConfig) -> EmbeddingVector:
    return FrozenEncoder.from_config(cfg).encode_text(tokens)


def encode_image(raw_feature, cfg: EncoderConfig) -> EmbeddingVector:
    return FrozenEncoder.from_config(cfg).encode_image(raw_feature)


def cosine_similarity(u, v) -> float:
    a, b = _as_array(u), _as_array(v)
    if a.shape != b.shape:
        raise InvalidArgumentError("cosine similarity needs equal dimensions")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def feature_seed(raw_feature, base_seed: int) -> int:
    """Seed derived from the feature bytes, so a sample's views depend on its content only."""
    arr = np.ascontiguousarray(_as_array(raw_feature))
    digest = hashlib.blake2b(arr.tobytes(), digest_size=8).digest()
    return int(np.random.SeedSequence([base_seed & _MASK64, int.from_bytes(digest, "little")])
               .generate_state(1, np.uint64)[0])


def augment_array(raw: np.ndarray, cfg: AugmentationConfig) -> np.ndarray:
    """Array form of :func:`augment`; returns shape (n_views, d)."""
    x = np.asarray(raw, dtype=np.float64)
    views = np.repeat(x[None, :], cfg.n_views, axis=0)
    if cfg.n_views == 1:
        return views
    rng = np.random.default_rng(cfg.seed)
    extra = views[1:]
    extra += cfg.noise_sigma * rng.standard_normal(extra.shape)
    keep = rng.random(extra.shape) >= cfg.dropout_fraction
    dropped = extra * keep
    norms = np.linalg.norm(dropped, axis=1)
    # a view dropped to all zeros keeps its noisy coordinates instead
    dropped[norms == 0.0] = extra[norms == 0.0]
    norms = np.linalg.norm(dropped, axis=1, keepdims=True)
    target = np.linalg.norm(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        views[1:] = np.where(norms > 0, dropped * (target / norms), dropped)
    return views


def augment(raw_feature, cfg: AugmentationConfig) -> list[EmbeddingVector]:
    """Seeded feature-space views of one sample; view 0 is the input itself."""
    x = _as_array(raw_feature)
    return [EmbeddingVector(v) for v in augment_array(x, cfg)]
