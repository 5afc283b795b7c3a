"""Text and video embeddings behind a provider interface.

Three providers ship: a deterministic mock (hash-seeded unit vectors), a
file-backed store of precomputed features, and a remote HTTP service. All
providers return unit-norm vectors. The order-sensitive positional pooling
used by the structural metric lives here too.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import requests

from .errors import MissingEmbeddingError, ParseError, ServiceError, ValidationError
from .manifest import PromptSuite, Shot, ShotManifest

NORM_TOLERANCE = 1e-6


def unit(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """L2-normalize a vector, rejecting non-finite or zero input."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"embedding must be a non-empty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("embedding contains non-finite entries")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValidationError("cannot normalize the zero vector")
    return v / norm


@dataclass(frozen=True, eq=False)
class Embedding:
    """Unit-norm vector tagged with the provider that produced it."""

    values: np.ndarray
    embedder_id: str

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValidationError("embedding contains non-finite entries")
        if abs(float(np.linalg.norm(v)) - 1.0) > NORM_TOLERANCE:
            raise ValidationError(
                f"embedding is not unit-norm (|v| = {np.linalg.norm(v):.8f})"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@runtime_checkable
class EmbeddingProvider(Protocol):
    embedder_id: str

    def embed_text(self, text: str) -> Embedding: ...

    def embed_shot(self, shot: Shot) -> Embedding: ...


def text_key(text: str) -> str:
    """Store key under which a text's embedding is filed."""
    return "txt:" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:24]


def video_key(video_id: str) -> str:
    """Store key for a provider-computed whole-video embedding."""
    return "video:" + video_id


class MockProvider:
    """Deterministic unit vectors: a pure function of the input string.

    Identical inputs collide, distinct inputs almost surely differ; the stream
    depends only on (dim, seed, input), never on call order.
    """

    def __init__(self, dim: int = 16, seed: int = 0):
        if dim < 2:
            raise ValidationError(f"mock dim must be >= 2, got {dim}")
        self.dim = dim
        self.seed = seed
        self.embedder_id = f"mock-d{dim}-s{seed}"
        self._cache: dict[str, Embedding] = {}
        self._lock = threading.Lock()

    def _vector(self, payload: str) -> Embedding:
        with self._lock:
            hit = self._cache.get(payload)
        if hit is not None:
            return hit
        digest = hashlib.sha256(f"{self.seed}|{payload}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        emb = Embedding(unit(rng.standard_normal(self.dim)), self.embedder_id)
        with self._lock:
            self._cache[payload] = emb
        return emb

    def embed_text(self, text: str) -> Embedding:
        if not text:
            raise ValidationError("cannot embed empty text")
        return self._vector("text|" + text)

    def embed_shot(self, shot: Shot) -> Embedding:
        if not shot.embedding_ref:
            raise MissingEmbeddingError(f"shot {shot.index} has no embedding_ref")
        return self._vector("ref|" + shot.embedding_ref)

    def embed_whole_video(self, manifest: ShotManifest) -> Embedding:
        refs = ",".join(s.embedding_ref for s in manifest.shots)
        return self._vector(f"video|{manifest.video_id}|{refs}")


_STORE_MAGIC = b"EMB1"


@dataclass
class EmbeddingStore:
    """Read-only map from refs / text keys to precomputed unit vectors."""

    embedder_id: str
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, ref: str, values: Sequence[float] | np.ndarray) -> None:
        v = unit(values)
        if v.size != self.dim:
            raise ValidationError(
                f"store {self.embedder_id}: entry {ref!r} has dim {v.size}, expected {self.dim}"
            )
        v.setflags(write=False)
        self.entries[ref] = v

    def add_text(self, text: str, values: Sequence[float] | np.ndarray) -> None:
        self.add(text_key(text), values)

    def _lookup(self, ref: str) -> Embedding:
        if ref not in self.entries:
            raise MissingEmbeddingError(f"missing embedding {ref}")
        return Embedding(self.entries[ref], self.embedder_id)

    def embed_text(self, text: str) -> Embedding:
        if not text:
            raise ValidationError("cannot embed empty text")
        return self._lookup(text_key(text))

    def embed_shot(self, shot: Shot) -> Embedding:
        if not shot.embedding_ref:
            raise MissingEmbeddingError(f"shot {shot.index} has no embedding_ref")
        return self._lookup(shot.embedding_ref)

    def embed_whole_video(self, manifest: ShotManifest) -> Embedding:
        return self._lookup(video_key(manifest.video_id))


def save_store_json(store: EmbeddingStore, path: str | Path) -> None:
    payload = {
        "embedder_id": store.embedder_id,
        "dim": store.dim,
        "entries": {ref: [float(x) for x in vec] for ref, vec in store.entries.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def save_store_binary(store: EmbeddingStore, path: str | Path) -> None:
    """Binary variant for large stores: little-endian float32 entries."""
    with open(path, "wb") as fh:
        ident = store.embedder_id.encode("utf-8")
        fh.write(_STORE_MAGIC)
        fh.write(struct.pack("<III", store.dim, len(store.entries), len(ident)))
        fh.write(ident)
        for ref in sorted(store.entries):
            ref_bytes = ref.encode("utf-8")
            fh.write(struct.pack("<H", len(ref_bytes)))
            fh.write(ref_bytes)
            fh.write(store.entries[ref].astype("<f4").tobytes())


def load_store(path: str | Path) -> EmbeddingStore:
    """Load a store from JSON or the binary format (sniffed by magic bytes)."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _STORE_MAGIC:
        return _load_store_binary(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: not a JSON or binary embedding store: {exc}") from exc
    for name in ("embedder_id", "dim", "entries"):
        if name not in data:
            raise ParseError(f"{path}: missing field {name!r}")
    store = EmbeddingStore(embedder_id=data["embedder_id"], dim=int(data["dim"]))
    for ref, vec in data["entries"].items():
        store.add(ref, vec)
    return store


def _load_store_binary(path: Path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        dim, count, ident_len = struct.unpack_from("<III", raw, 4)
        offset = 16
        embedder_id = raw[offset : offset + ident_len].decode("utf-8")
        offset += ident_len
        store = EmbeddingStore(embedder_id=embedder_id, dim=dim)
        for _ in range(count):
            (ref_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            ref = raw[offset : offset + ref_len].decode("utf-8")
            offset += ref_len
            vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset).astype(float)
            offset += 4 * dim
            store.add(ref, vec)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: truncated or corrupt binary store: {exc}") from exc
    return store


class RemoteProvider:
    """HTTP embedding service client with bounded in-flight requests and retries.

    The service accepts {"texts": [...]} or {"image_paths": [...]} and returns
    {"vectors": [[...], ...]}. The auth token is read from the environment.
    """

    def __init__(
        self,
        endpoint: str,
        embedder_id: str = "remote",
        token_env: str = "LONGSHOT_EMBED_TOKEN",
        max_in_flight: int = 4,
        retries: int = 2,
        timeout: float = 30.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.embedder_id = embedder_id
        self.token_env = token_env
        self.retries = retries
        self.timeout = timeout
        self._session = session or requests.Session()
        self._semaphore = threading.Semaphore(max_in_flight)
        self._cache: dict[str, Embedding] = {}
        self._lock = threading.Lock()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, payload: dict) -> list[list[float]]:
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._semaphore:
                    response = self._session.post(
                        self.endpoint, json=payload, headers=self._headers(),
                        timeout=self.timeout,
                    )
                if response.status_code in (429, 500, 502, 503, 504):
                    last_error = ServiceError(
                        f"embedding service returned {response.status_code}"
                    )
                    continue
                response.raise_for_status()
                return response.json()["vectors"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
        raise ServiceError(
            f"embedding service unavailable after {self.retries + 1} attempts: {last_error}"
        )

    def embed_text(self, text: str) -> Embedding:
        if not text:
            raise ValidationError("cannot embed empty text")
        key = text_key(text)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        vectors = self._post({"texts": [text]})
        emb = Embedding(unit(vectors[0]), self.embedder_id)
        with self._lock:
            self._cache[key] = emb
        return emb

    def embed_shot(self, shot: Shot) -> Embedding:
        if not shot.keyframes:
            raise ValidationError(
                f"shot {shot.index}: remote provider needs keyframes, none present"
            )
        vectors = self._post({"image_paths": list(shot.keyframes)})
        pooled = np.mean([unit(v) for v in vectors], axis=0)
        return Embedding(unit(pooled), self.embedder_id)


class CompositeProvider:
    """Resolve shot refs from overlay dicts first, then fall back to a base provider.

    Corruption operators that mint new embeddings publish them as overlays so
    scoring sees the corrupted features without mutating the base store.
    """

    def __init__(self, base: EmbeddingProvider, *overlays: dict[str, Embedding]):
        self.base = base
        self.overlays = overlays
        self.embedder_id = base.embedder_id

    def embed_text(self, text: str) -> Embedding:
        return self.base.embed_text(text)

    def embed_shot(self, shot: Shot) -> Embedding:
        for overlay in self.overlays:
            if shot.embedding_ref in overlay:
                return overlay[shot.embedding_ref]
        return self.base.embed_shot(shot)

    def embed_whole_video(self, manifest: ShotManifest) -> Embedding:
        return self.base.embed_whole_video(manifest)  # type: ignore[attr-defined]


def global_prompt_text(suite: PromptSuite) -> str:
    """Storyline concatenated with all shot descriptions in index order."""
    return "\n".join([suite.storyline, *(s.description for s in suite.shots)])


def embed_prompt_global(suite: PromptSuite, provider: EmbeddingProvider) -> Embedding:
    """Embedding of the full prompt text (storyline + every shot description)."""
    return provider.embed_text(global_prompt_text(suite))


def positional_weights(k: int) -> np.ndarray:
    """Linear-decay weights 2(K-k+1)/(K(K+1)) over 1-based positions; sum to 1."""
    if k < 1:
        raise ValidationError("positional_weights needs k >= 1")
    positions = np.arange(1, k + 1, dtype=float)
    return 2.0 * (k - positions + 1.0) / (k * (k + 1.0))


def positional_pool(
    embeddings: Sequence[Embedding], weights: Sequence[float] | None = None
) -> Embedding:
    """Order-sensitive pooling: normalize(sum of weighted vectors).

    Earlier positions carry more weight, so permuting distinct inputs changes
    the output; all-equal inputs pool to themselves under any order.
    """
    if not embeddings:
        raise ValidationError("cannot pool zero embeddings")
    dims = {e.dim for e in embeddings}
    if len(dims) != 1:
        raise ValidationError(f"mixed embedding dims in pool: {sorted(dims)}")
    if len(embeddings) == 1 and weights is None:
        return embeddings[0]
    w = positional_weights(len(embeddings)) if weights is None else np.asarray(weights, float)
    if w.size != len(embeddings):
        raise ValidationError("weights length must match embedding count")
    stacked = np.stack([e.values for e in embeddings])
    return Embedding(unit(w @ stacked), embeddings[0].embedder_id)


def embed_video_global(
    manifest: ShotManifest,
    provider: EmbeddingProvider,
    mode: str = "positional-pool",
    weights: Sequence[float] | None = None,
) -> Embedding:
    """Global video embedding, either provider-computed or pooled from shots."""
    if mode == "whole-video":
        embed = getattr(provider, "embed_whole_video", None)
        if embed is None:
            raise ValidationError(
                f"provider {provider.embedder_id} does not support whole-video mode"
            )
        return embed(manifest)
    if mode == "positional-pool":
        shot_embeddings = [provider.embed_shot(s) for s in manifest.shots]
        return positional_pool(shot_embeddings, weights)
    raise ValidationError(f"unknown embed mode {mode!r}")
