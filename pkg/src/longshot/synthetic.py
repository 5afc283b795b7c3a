"""Synthetic desk-scale fixtures: aligned suite/manifest/store triples whose
structural score starts high and degrades under corruption, plus a hash-based
per-shot quality stand-in for aggregation-style short metrics."""

from __future__ import annotations

import numpy as np

from .corruption import BankEntry, ShotBank
from .embedder import (
    Embedding,
    EmbeddingStore,
    global_prompt_text,
    positional_weights,
    unit,
)
from .manifest import PromptSuite, Shot, ShotManifest, ShotPrompt
from .orthogonality import aggregate_short
from .rand import derive_seed


def make_aligned_example(
    suite_id: str,
    video_id: str,
    k: int = 12,
    dim: int = 32,
    seed: int = 0,
    noise: float = 0.05,
    model_id: str = "mock-model",
    keyframes_per_shot: int = 0,
) -> tuple[PromptSuite, ShotManifest, EmbeddingStore]:
    """A suite/manifest/store triple where each shot's video embedding is a
    noisy copy of its prompt embedding and the stored global prompt embedding
    is the positional pool of the prompt embeddings, so the uncorrupted
    manifest ranks shots almost exactly as intended."""
    rng = np.random.default_rng(derive_seed("aligned", suite_id, video_id, seed))
    prompts = tuple(
        ShotPrompt(index=i, description=f"[{suite_id}] shot {i}: scene beat {i}")
        for i in range(k)
    )
    suite = PromptSuite(
        suite_id=suite_id, storyline=f"storyline for {suite_id}", shots=prompts
    )
    store = EmbeddingStore(embedder_id=f"aligned-d{dim}", dim=dim)
    prompt_vectors = []
    for prompt in prompts:
        vector = unit(rng.standard_normal(dim))
        prompt_vectors.append(vector)
        store.add_text(prompt.description, vector)
    weights = positional_weights(k)
    store.add_text(global_prompt_text(suite), weights @ np.stack(prompt_vectors))
    shots = []
    for i in range(k):
        ref = f"{video_id}:s{i:02d}"
        store.add(ref, prompt_vectors[i] + noise * rng.standard_normal(dim))
        frames = tuple(
            f"frames/{video_id}_s{i:02d}_f{j}.png" for j in range(keyframes_per_shot)
        )
        shots.append(Shot(index=i, duration_s=5.0, keyframes=frames, embedding_ref=ref))
    manifest = ShotManifest(
        video_id=video_id, model_id=model_id, suite_id=suite_id, shots=tuple(shots)
    )
    return suite, manifest, store


def make_bank(
    embedder_id: str, dim: int, n_entries: int, seed: int = 0
) -> ShotBank:
    """Random unit-embedding shot bank for replacement tests."""
    rng = np.random.default_rng(derive_seed("bank", embedder_id, dim, n_entries, seed))
    entries = tuple(
        BankEntry(
            block_id=f"b{i:03d}",
            embedding=Embedding(unit(rng.standard_normal(dim)), embedder_id),
            source_video_id=f"pool-video-{i:03d}",
        )
        for i in range(n_entries)
    )
    return ShotBank(embedder_id=embedder_id, dim=dim, entries=entries)


def mock_shot_quality(shot: Shot) -> float:
    """Deterministic per-shot quality in [0, 1], a pure function of the shot's
    embedding ref — a stand-in for a frame-level quality model."""
    return (derive_seed("quality", shot.embedding_ref) % 10**9) / 10**9


def mean_quality_metric(manifest: ShotManifest) -> float:
    """Aggregation-style short metric: mean of per-shot mock qualities."""
    return aggregate_short([mock_shot_quality(s) for s in manifest.shots], "mean")
