"""Structural alignment scoring and fusion with the judge score.

The metric compares two K-dimensional similarity profiles: how prominent each
shot prompt is within the global prompt text, and how prominent it is within
the global video embedding. Their rank correlation rewards videos that realize
each shot's intended contribution in the intended proportion, which makes the
score sensitive to reordering and structural corruption.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

import numpy as np

from . import stats
from .embedder import EmbeddingProvider, embed_prompt_global, embed_video_global
from .errors import DegenerateInputError, ValidationError
from .manifest import PromptSuite, ShotManifest

DEFAULT_ALPHA = 0.5

EMBED_MODES = ("positional-pool", "whole-video")


@dataclass(frozen=True, eq=False)
class SimilarityVector:
    """Per-shot cosine similarities against a global embedding."""

    values: np.ndarray
    kind: str  # "prompt-prompt" or "prompt-video"

    def __post_init__(self) -> None:
        if self.kind not in ("prompt-prompt", "prompt-video"):
            raise ValidationError(f"unknown similarity kind {self.kind!r}")
        v = np.clip(np.asarray(self.values, dtype=float), -1.0, 1.0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.size)


_PROMPT_CACHE: dict[tuple[str, str, str], np.ndarray] = {}
_PROMPT_CACHE_LOCK = threading.Lock()


def clear_prompt_cache() -> None:
    with _PROMPT_CACHE_LOCK:
        _PROMPT_CACHE.clear()


def _suite_fingerprint(suite: PromptSuite) -> str:
    text = "\x1f".join([suite.storyline, *(s.description for s in suite.shots)])
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def prompt_similarity_vector(
    suite: PromptSuite, provider: EmbeddingProvider
) -> SimilarityVector:
    """Similarity of each shot prompt to the global prompt embedding.

    Video-independent, so it is computed once per (provider, suite) and cached
    across every manifest sharing the suite.
    """
    key = (provider.embedder_id, suite.suite_id, _suite_fingerprint(suite))
    with _PROMPT_CACHE_LOCK:
        cached = _PROMPT_CACHE.get(key)
    if cached is not None:
        return SimilarityVector(cached, kind="prompt-prompt")
    global_embedding = embed_prompt_global(suite, provider)
    values = np.array(
        [
            stats.cosine(provider.embed_text(s.description).values, global_embedding.values)
            for s in suite.shots
        ]
    )
    with _PROMPT_CACHE_LOCK:
        _PROMPT_CACHE.setdefault(key, values)
    return SimilarityVector(values, kind="prompt-prompt")


def video_similarity_vector(
    suite: PromptSuite,
    manifest: ShotManifest,
    provider: EmbeddingProvider,
    mode: str = "positional-pool",
) -> SimilarityVector:
    """Similarity of each shot prompt to the global video embedding."""
    global_embedding = embed_video_global(manifest, provider, mode=mode)
    values = np.array(
        [
            stats.cosine(provider.embed_text(s.description).values, global_embedding.values)
            for s in suite.shots
        ]
    )
    return SimilarityVector(values, kind="prompt-video")


def similarity_vectors(
    suite: PromptSuite,
    manifest: ShotManifest,
    provider: EmbeddingProvider,
    mode: str = "positional-pool",
) -> tuple[SimilarityVector, SimilarityVector]:
    """Both K-dimensional similarity profiles for one (suite, manifest) pair."""
    if manifest.suite_id != suite.suite_id:
        raise ValidationError(
            f"manifest {manifest.video_id} is linked to suite {manifest.suite_id!r}, "
            f"not {suite.suite_id!r}"
        )
    if manifest.k != suite.k:
        raise ValidationError(
            f"manifest {manifest.video_id}: shot count {manifest.k} != suite K {suite.k}"
        )
    s_c = prompt_similarity_vector(suite, provider)
    s_v = video_similarity_vector(suite, manifest, provider, mode=mode)
    return s_c, s_v


def dsa_score(s_c: SimilarityVector, s_v: SimilarityVector) -> float:
    """Rank correlation between the two similarity profiles, in [-1, 1].

    An all-tied profile has no rank structure; that raises rather than
    returning a silent sentinel so sweeps never average garbage.
    """
    if len(s_c) != len(s_v):
        raise ValidationError(f"length mismatch: {len(s_c)} != {len(s_v)}")
    if len(s_c) < 3:
        raise ValidationError(f"structural score needs K >= 3, got K = {len(s_c)}")
    try:
        return stats.spearman(s_c.values, s_v.values)
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"undefined structural score: {exc}") from exc


def normalize_dsa(raw: float) -> float:
    """Affine bijection [-1, 1] -> [0, 1]."""
    if not -1.0 - 1e-9 <= raw <= 1.0 + 1e-9:
        raise ValidationError(f"raw score {raw} outside [-1, 1]")
    return (min(max(raw, -1.0), 1.0) + 1.0) / 2.0


@dataclass(frozen=True)
class FusedScore:
    """Fusion of the structural and judge sub-metrics."""

    m_dsa: float
    m_mllm: float
    alpha: float
    fused: float
    raw_spearman: float | None = None

    def __post_init__(self) -> None:
        if self.raw_spearman is not None:
            if abs(self.m_dsa - normalize_dsa(self.raw_spearman)) > 1e-12:
                raise ValidationError(
                    "m_dsa does not match (raw_spearman + 1) / 2"
                )


def fuse(
    m_dsa: float,
    m_mllm: float,
    alpha: float = DEFAULT_ALPHA,
    raw_spearman: float | None = None,
) -> FusedScore:
    """Convex combination alpha * m_dsa + (1 - alpha) * m_mllm."""
    for name, value in (("m_dsa", m_dsa), ("m_mllm", m_mllm), ("alpha", alpha)):
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"{name} must be in [0, 1], got {value}")
    fused = alpha * m_dsa + (1.0 - alpha) * m_mllm
    return FusedScore(
        m_dsa=m_dsa, m_mllm=m_mllm, alpha=alpha, fused=fused, raw_spearman=raw_spearman
    )


def score_manifest(
    suite: PromptSuite,
    manifest: ShotManifest,
    provider: EmbeddingProvider,
    mode: str = "positional-pool",
) -> tuple[float, float]:
    """(raw rank correlation, normalized structural score) for one manifest."""
    s_c, s_v = similarity_vectors(suite, manifest, provider, mode=mode)
    raw = dsa_score(s_c, s_v)
    return raw, normalize_dsa(raw)


def score_record(
    manifest: ShotManifest,
    raw_spearman: float,
    m_dsa: float,
    embed_mode: str,
    fused: FusedScore | None = None,
) -> dict:
    """One JSON-ready score record per (video_id, model_id)."""
    record: dict = {
        "video_id": manifest.video_id,
        "model_id": manifest.model_id,
        "raw_spearman": raw_spearman,
        "m_dsa": m_dsa,
        "embed_mode": embed_mode,
    }
    if fused is not None:
        record["m_mllm"] = fused.m_mllm
        record["alpha"] = fused.alpha
        record["fused"] = fused.fused
    return record
