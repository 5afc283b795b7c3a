"""Structure-targeting corruption operators, strength sweeps, and sensitivity.

Operators act on manifests and embeddings, never pixels: block shuffling and
bank replacement are exact, while editing and resynthesis run behind a
transformer interface with deterministic mocks (or an external command for
users with real editing models). Every operator preserves the shot count and
is a pure function of (manifest, parameters, seed).
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
import shlex
import statistics
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import stats
from .embedder import Embedding, EmbeddingProvider, positional_pool, unit
from .errors import LongshotError, ParseError, ServiceError, ValidationError
from .manifest import Shot, ShotManifest
from .rand import derive_seed, draw, gauss_vector, permute, seeded_rng

OPERATORS = ("shuffle", "replace", "edit", "synthesize")
DEFAULT_BLOCK_S = 10.0
R2_THRESHOLD = 0.6


@dataclass(frozen=True)
class CorruptionSpec:
    """One operator application: strength is a fraction for shuffle, a block
    count for the others."""

    operator: str
    strength: float
    block_s: float = DEFAULT_BLOCK_S
    seed: int = 0

    def __post_init__(self) -> None:
        if self.operator not in OPERATORS:
            raise ValidationError(f"unknown operator {self.operator!r}")
        if self.block_s <= 0:
            raise ValidationError("block_s must be > 0")
        if self.operator == "shuffle":
            if not 0.0 < self.strength <= 1.0:
                raise ValidationError(
                    f"shuffle fraction must be in (0, 1], got {self.strength}"
                )
        elif self.strength < 0 or self.strength != int(self.strength):
            raise ValidationError(
                f"{self.operator} strength must be a non-negative block count, "
                f"got {self.strength}"
            )


def blockify(manifest: ShotManifest, block_s: float = DEFAULT_BLOCK_S) -> list[tuple[int, int]]:
    """Greedy contiguous grouping of shots into blocks of >= block_s seconds.

    Returns half-open position ranges into the shot list; a final partial
    block is retained.
    """
    if block_s <= 0:
        raise ValidationError("block_s must be > 0")
    blocks: list[tuple[int, int]] = []
    start = 0
    acc = 0.0
    for position, shot in enumerate(manifest.shots):
        acc += shot.duration_s
        if acc >= block_s - 1e-9:
            blocks.append((start, position + 1))
            start = position + 1
            acc = 0.0
    if start < manifest.k:
        blocks.append((start, manifest.k))
    return blocks


def shuffle(
    manifest: ShotManifest,
    fraction: float,
    seed: int,
    block_s: float = DEFAULT_BLOCK_S,
) -> ShotManifest:
    """Permute a random ceil(fraction * B) subset of blocks among their positions.

    An identity permutation is resampled once; if it is still the identity the
    manifest is returned with an "identity_permutation" metadata flag instead
    of being silently re-rolled.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"shuffle fraction must be in (0, 1], got {fraction}")
    blocks = blockify(manifest, block_s)
    n_selected = math.ceil(fraction * len(blocks))
    if n_selected < 2:
        raise ValidationError(
            f"nothing to permute: fraction {fraction} selects {n_selected} of "
            f"{len(blocks)} blocks"
        )
    rng = seeded_rng("shuffle", seed)
    positions = sorted(draw(rng, range(len(blocks)), n_selected))
    chosen = [blocks[p] for p in positions]
    permuted = permute(rng, chosen)
    if permuted == chosen:
        permuted = permute(rng, chosen)
    flag_identity = permuted == chosen

    arrangement = list(blocks)
    for position, block in zip(positions, permuted):
        arrangement[position] = block
    shots: list[Shot] = []
    for slot, block in enumerate(arrangement):
        moved = block != blocks[slot]
        for shot in manifest.shots[block[0] : block[1]]:
            shots.append(
                dataclasses.replace(shot, provenance="shuffled") if moved else shot
            )
    metadata = {"identity_permutation": True} if flag_identity else {}
    return manifest.with_shots(shots, **metadata)


def bank_ref(block_id: str) -> str:
    return f"bank:{block_id}"


@dataclass(frozen=True)
class BankEntry:
    block_id: str
    embedding: Embedding
    keyframes: tuple[str, ...] = ()
    source_video_id: str = ""


@dataclass
class ShotBank:
    """Exogenous replacement blocks with precomputed embeddings."""

    embedder_id: str
    dim: int
    entries: tuple[BankEntry, ...] = ()

    def __post_init__(self) -> None:
        ids = [e.block_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("shot bank has duplicate block ids")
        for entry in self.entries:
            if entry.embedding.dim != self.dim:
                raise ValidationError(
                    f"bank entry {entry.block_id}: dim {entry.embedding.dim} != {self.dim}"
                )

    def overlay(self) -> dict[str, Embedding]:
        """Embedding overlay resolving bank refs, for CompositeProvider."""
        return {bank_ref(e.block_id): e.embedding for e in self.entries}


def load_shot_bank(path: str | Path) -> ShotBank:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    for name in ("embedder_id", "dim", "entries"):
        if name not in data:
            raise ParseError(f"{path}: missing field {name!r}")
    embedder_id = data["embedder_id"]
    entries = tuple(
        BankEntry(
            block_id=block_id,
            embedding=Embedding(unit(raw["values"]), embedder_id),
            keyframes=tuple(raw.get("keyframes", ())),
            source_video_id=raw.get("source_video_id", ""),
        )
        for block_id, raw in sorted(data["entries"].items())
    )
    return ShotBank(embedder_id=embedder_id, dim=int(data["dim"]), entries=entries)


def save_shot_bank(bank: ShotBank, path: str | Path) -> None:
    payload = {
        "embedder_id": bank.embedder_id,
        "dim": bank.dim,
        "entries": {
            e.block_id: {
                "values": [float(x) for x in e.embedding.values],
                "keyframes": list(e.keyframes),
                "source_video_id": e.source_video_id,
            }
            for e in bank.entries
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def best_bank_match(bank: ShotBank, target: Embedding) -> BankEntry:
    """Exhaustive argmax-cosine scan; ties break to the smallest block_id."""
    if not bank.entries:
        raise ValidationError("shot bank is empty")
    best: BankEntry | None = None
    best_cos = -2.0
    for entry in sorted(bank.entries, key=lambda e: e.block_id):
        c = stats.cosine(entry.embedding.values, target.values)
        if c > best_cos:
            best, best_cos = entry, c
    assert best is not None
    return best


def replace(
    manifest: ShotManifest,
    bank: ShotBank,
    k: int,
    provider: EmbeddingProvider,
    seed: int,
    block_s: float = DEFAULT_BLOCK_S,
) -> ShotManifest:
    """Swap k random blocks for their most cosine-similar bank entries.

    Every shot of a replaced block points at the bank entry's embedding
    (resolve it by layering bank.overlay() over the provider when scoring).
    """
    if not bank.entries:
        raise ValidationError("shot bank is empty")
    blocks = blockify(manifest, block_s)
    if k > len(blocks):
        raise ValidationError(f"k = {k} exceeds block count {len(blocks)}")
    if k == 0:
        return manifest
    rng = seeded_rng("replace", seed)
    positions = sorted(draw(rng, range(len(blocks)), k))
    shots = list(manifest.shots)
    for position in positions:
        lo, hi = blocks[position]
        block_embedding = positional_pool(
            [provider.embed_shot(s) for s in manifest.shots[lo:hi]]
        )
        entry = best_bank_match(bank, block_embedding)
        for i in range(lo, hi):
            shots[i] = dataclasses.replace(
                shots[i],
                embedding_ref=bank_ref(entry.block_id),
                keyframes=entry.keyframes,
                provenance="replaced",
            )
    return manifest.with_shots(shots)


class ShotTransformer(Protocol):
    """Produces a replacement shot; new embeddings are published via .overlay."""

    overlay: dict[str, Embedding]

    def transform(self, shot: Shot, caption: str | None, rng: random.Random) -> Shot: ...


class RotationTransformer:
    """Deterministic mock editor: rotates the shot embedding toward a seeded
    random direction, standing in for a semantic edit that preserves layout."""

    def __init__(self, provider: EmbeddingProvider, angle_rad: float = 0.5):
        self.provider = provider
        self.angle_rad = angle_rad
        self.overlay: dict[str, Embedding] = {}

    def transform(self, shot: Shot, caption: str | None, rng: random.Random) -> Shot:
        base = self.provider.embed_shot(shot)
        direction = gauss_vector(rng, base.dim)
        perp = direction - float(direction @ base.values) * base.values
        norm = float(np.linalg.norm(perp))
        if norm < 1e-12:
            perp = gauss_vector(rng, base.dim)
            norm = float(np.linalg.norm(perp))
        rotated = unit(
            math.cos(self.angle_rad) * base.values + math.sin(self.angle_rad) * perp / norm
        )
        embedding = Embedding(rotated, self.provider.embedder_id)
        digest = derive_seed(tuple(rotated.tolist()))
        ref = f"edited:{shot.embedding_ref}:{digest:016x}"
        self.overlay[ref] = embedding
        return dataclasses.replace(shot, embedding_ref=ref)


class TextEmbedTransformer:
    """Deterministic mock synthesizer: the replacement shot's embedding is the
    text embedding of its rewritten caption; the first frame is kept as the
    visual reference."""

    def __init__(self, provider: EmbeddingProvider):
        self.provider = provider
        self.overlay: dict[str, Embedding] = {}

    def transform(self, shot: Shot, caption: str | None, rng: random.Random) -> Shot:
        if not caption:
            raise ValidationError("text transformer needs a caption")
        embedding = self.provider.embed_text(caption)
        ref = f"synth:{derive_seed(caption):016x}"
        self.overlay[ref] = embedding
        keyframes = shot.keyframes[:1]
        return dataclasses.replace(shot, embedding_ref=ref, keyframes=keyframes)


class ExternalCommandTransformer:
    """Shells out to a real editing/generation tool per shot.

    The command template receives {in_keyframe}, {caption} and {out_dir}; it
    must write replacement keyframes into {out_dir}. Embeddings for the new
    keyframes are recomputed through the provider.
    """

    def __init__(
        self, command_template: str, out_root: str | Path, provider: EmbeddingProvider
    ):
        self.command_template = command_template
        self.out_root = Path(out_root)
        self.provider = provider
        self.overlay: dict[str, Embedding] = {}
        self._counter = 0

    def transform(self, shot: Shot, caption: str | None, rng: random.Random) -> Shot:
        if not shot.keyframes:
            raise ValidationError(f"shot {shot.index} has no keyframes to transform")
        out_dir = self.out_root / f"shot_{self._counter:04d}"
        self._counter += 1
        out_dir.mkdir(parents=True, exist_ok=True)
        # quote substitutions so empty captions and spaced paths stay one argument
        command = shlex.split(
            self.command_template.format(
                in_keyframe=shlex.quote(shot.keyframes[0]),
                caption=shlex.quote(caption or ""),
                out_dir=shlex.quote(str(out_dir)),
            )
        )
        result = subprocess.run(command, capture_output=True, text=True)
        if result.returncode != 0:
            raise ServiceError(
                f"transformer command failed for shot {shot.index}: "
                f"{result.stderr.strip()}"
            )
        keyframes = tuple(sorted(str(p) for p in out_dir.iterdir() if p.is_file()))
        if not keyframes:
            raise ServiceError(f"transformer produced no keyframes in {out_dir}")
        probe = dataclasses.replace(shot, keyframes=keyframes)
        embedding = self.provider.embed_shot(probe)
        ref = f"xform:{derive_seed(keyframes):016x}"
        self.overlay[ref] = embedding
        return dataclasses.replace(shot, embedding_ref=ref, keyframes=keyframes)


def _select_block_shots(
    manifest: ShotManifest, k: int, seed: int, label: str, block_s: float
) -> list[int]:
    blocks = blockify(manifest, block_s)
    if k > len(blocks):
        raise ValidationError(f"k = {k} exceeds block count {len(blocks)}")
    rng = seeded_rng(label, seed)
    positions = sorted(draw(rng, range(len(blocks)), k))
    return [i for p in positions for i in range(blocks[p][0], blocks[p][1])]


def edit(
    manifest: ShotManifest,
    k: int,
    transformer: ShotTransformer,
    seed: int,
    block_s: float = DEFAULT_BLOCK_S,
) -> ShotManifest:
    """Re-embed/re-keyframe k random blocks through the transformer."""
    if k == 0:
        return manifest
    targets = _select_block_shots(manifest, k, seed, "edit", block_s)
    rng = seeded_rng("edit-transform", seed)
    shots = list(manifest.shots)
    for i in targets:
        shots[i] = dataclasses.replace(
            transformer.transform(shots[i], None, rng), provenance="edited"
        )
    return manifest.with_shots(shots)


def synthesize(
    manifest: ShotManifest,
    k: int,
    rewriter: Callable[[str], str],
    transformer: ShotTransformer,
    seed: int,
    captioner: Callable[[Shot], str],
    block_s: float = DEFAULT_BLOCK_S,
) -> ShotManifest:
    """Regenerate k random blocks from rewritten captions of their shots."""
    if k == 0:
        return manifest
    targets = _select_block_shots(manifest, k, seed, "synthesize", block_s)
    rng = seeded_rng("synthesize-transform", seed)
    shots = list(manifest.shots)
    for i in targets:
        caption = captioner(shots[i])
        rewritten = rewriter(caption)
        shots[i] = dataclasses.replace(
            transformer.transform(shots[i], rewritten, rng), provenance="synthesized"
        )
    return manifest.with_shots(shots)


MetricFn = Callable[[ShotManifest], float]
ApplyFn = Callable[[ShotManifest, float, int], ShotManifest]


@dataclass(frozen=True)
class SweepCell:
    operator: str
    strength: float
    trial: int
    video_id: str
    score: float | None
    error: str | None = None


@dataclass(frozen=True)
class SweepResult:
    operator: str
    metric: str
    strengths: tuple[float, ...]
    trials: int
    cells: tuple[SweepCell, ...]

    def mean_scores(self) -> dict[float, float | None]:
        means: dict[float, float | None] = {}
        for strength in self.strengths:
            scores = [
                c.score
                for c in self.cells
                if c.strength == strength and c.score is not None
            ]
            means[strength] = statistics.fmean(scores) if scores else None
        return means


def sweep(
    metric: MetricFn,
    metric_name: str,
    manifests: Sequence[ShotManifest],
    operator: str,
    apply_op: ApplyFn,
    strengths: Sequence[float],
    trials: int,
    seed: int,
) -> SweepResult:
    """Score every (strength, manifest, trial) cell; strength 0 is the
    uncorrupted baseline. Per-cell failures are recorded, not raised, and
    per-trial seeds derive from (seed, strength index, trial index) so
    scheduling order never matters."""
    if not strengths:
        raise ValidationError("strength list is empty")
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    cells: list[SweepCell] = []
    for strength_index, strength in enumerate(strengths):
        for manifest in manifests:
            for trial in range(trials):
                trial_seed = derive_seed(seed, strength_index, trial)
                try:
                    corrupted = (
                        manifest
                        if strength == 0
                        else apply_op(manifest, strength, trial_seed)
                    )
                    score: float | None = metric(corrupted)
                    error = None
                except LongshotError as exc:
                    score, error = None, str(exc)
                cells.append(
                    SweepCell(operator, strength, trial, manifest.video_id, score, error)
                )
    return SweepResult(
        operator=operator,
        metric=metric_name,
        strengths=tuple(strengths),
        trials=trials,
        cells=tuple(cells),
    )


@dataclass(frozen=True)
class SensitivityResult:
    strengths: tuple[float, ...]
    mean_scores: tuple[float, ...]
    slope: float
    r_squared: float
    sensitive: bool


def classify_sensitivity(result: SweepResult) -> SensitivityResult:
    """Regress mean score on strength: sensitive iff slope < 0 and R² >= 0.6."""
    means = result.mean_scores()
    missing = [s for s, m in means.items() if m is None]
    if missing:
        raise ValidationError(f"no successful scores at strengths {missing}")
    strengths = list(result.strengths)
    if len(set(strengths)) < 2:
        raise ValidationError("sensitivity needs >= 2 distinct strengths")
    values = [means[s] for s in strengths]
    fit = stats.ols_fit(strengths, values)
    return SensitivityResult(
        strengths=tuple(strengths),
        mean_scores=tuple(values),
        slope=fit.slope,
        r_squared=fit.r_squared,
        sensitive=fit.slope < 0 and fit.r_squared >= R2_THRESHOLD,
    )


def sweep_to_csv(result: SweepResult, path: str | Path) -> None:
    """Deterministic CSV: operator,strength,trial,video_id,score."""
    lines = ["operator,strength,trial,video_id,score"]
    for cell in result.cells:
        score = "" if cell.score is None else repr(cell.score)
        lines.append(
            f"{cell.operator},{cell.strength!r},{cell.trial},{cell.video_id},{score}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sensitivity_summary(result: SweepResult, sensitivity: SensitivityResult) -> dict:
    return {
        "metric": result.metric,
        "operator": result.operator,
        "strengths": list(result.strengths),
        "mean_scores": list(sensitivity.mean_scores),
        "slope": sensitivity.slope,
        "r_squared": sensitivity.r_squared,
        "sensitive": sensitivity.sensitive,
    }
