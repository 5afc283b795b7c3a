"""Shot-manifest data model: prompt suites and shot manifests with JSON I/O.

A manifest represents one long video as an ordered list of shots; list order is
the single source of temporal truth. Manifests and suites are immutable after
load; corruption operators build new values instead of mutating.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import ParseError, ValidationError

PROVENANCE_TAGS = ("original", "shuffled", "replaced", "edited", "synthesized")


@dataclass(frozen=True)
class ShotPrompt:
    """One shot's text prompt with its planned duration and transition."""

    index: int
    description: str
    duration_s: float = 5.0
    cut_type: str = "cut"

    def __post_init__(self) -> None:
        if not self.description:
            raise ValidationError(f"shot {self.index}: description is empty")
        if not self.duration_s > 0:
            raise ValidationError(
                f"shot {self.index}: duration_s must be > 0, got {self.duration_s}"
            )


@dataclass(frozen=True)
class PromptSuite:
    """Storyline plus the ordered per-shot prompts used for generation and scoring."""

    suite_id: str
    storyline: str
    shots: tuple[ShotPrompt, ...]
    target_total_s: float = 0.0

    def __post_init__(self) -> None:
        indices = [s.index for s in self.shots]
        if indices != list(range(len(self.shots))):
            present = set(indices)
            for i in range(len(self.shots)):
                if i not in present:
                    raise ValidationError(f"suite {self.suite_id}: index gap at {i}")
            raise ValidationError(
                f"suite {self.suite_id}: shot indices must be 0..K-1 in list order"
            )
        if len(self.shots) < 2:
            raise ValidationError(
                f"suite {self.suite_id}: K must be >= 2, got {len(self.shots)}"
            )
        if self.target_total_s == 0.0:
            object.__setattr__(
                self, "target_total_s", sum(s.duration_s for s in self.shots)
            )

    @property
    def k(self) -> int:
        return len(self.shots)

    @property
    def total_duration_s(self) -> float:
        return sum(s.duration_s for s in self.shots)


@dataclass(frozen=True)
class Shot:
    """One generated shot: keyframe references plus a resolvable embedding ref."""

    index: int
    duration_s: float
    keyframes: tuple[str, ...] = ()
    embedding_ref: str = ""
    provenance: str = "original"

    def __post_init__(self) -> None:
        if not self.duration_s > 0:
            raise ValidationError(
                f"shot {self.index}: duration_s must be > 0, got {self.duration_s}"
            )
        if self.provenance not in PROVENANCE_TAGS:
            raise ValidationError(
                f"shot {self.index}: unknown provenance {self.provenance!r}"
            )


@dataclass(frozen=True)
class ShotManifest:
    """One long video as an ordered sequence of shots."""

    video_id: str
    model_id: str
    suite_id: str
    shots: tuple[Shot, ...]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        k = len(self.shots)
        if k == 0:
            raise ValidationError(f"manifest {self.video_id}: no shots")
        if sorted(s.index for s in self.shots) != list(range(k)):
            raise ValidationError(
                f"manifest {self.video_id}: shot indices must be a permutation of 0..{k - 1}"
            )

    @property
    def k(self) -> int:
        return len(self.shots)

    def with_shots(self, shots: Sequence[Shot], **metadata: Any) -> "ShotManifest":
        """New manifest with replaced shot list and extra metadata entries."""
        merged = dict(self.metadata)
        merged.update(metadata)
        return replace(self, shots=tuple(shots), metadata=merged)


def _load_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc


def _require_fields(obj: Mapping[str, Any], fields: Sequence[str], where: str) -> None:
    for name in fields:
        if name not in obj:
            raise ParseError(f"{where}: missing field {name!r}")


def load_prompt_suite(path: str | Path) -> PromptSuite:
    """Load and validate a prompt-suite JSON file."""
    data = _load_json(path)
    _require_fields(data, ("suite_id", "storyline", "shots"), str(path))
    shots = []
    for raw in data["shots"]:
        _require_fields(raw, ("index", "description"), f"{path} shot")
        shots.append(
            ShotPrompt(
                index=int(raw["index"]),
                description=raw["description"],
                duration_s=float(raw.get("duration_s", 5.0)),
                cut_type=raw.get("cut_type", "cut"),
            )
        )
    shots.sort(key=lambda s: s.index)
    return PromptSuite(
        suite_id=data["suite_id"],
        storyline=data["storyline"],
        shots=tuple(shots),
        target_total_s=float(data.get("target_total_s", 0.0)),
    )


def save_prompt_suite(suite: PromptSuite, path: str | Path) -> None:
    payload = {
        "suite_id": suite.suite_id,
        "storyline": suite.storyline,
        "target_total_s": suite.target_total_s,
        "shots": [
            {
                "index": s.index,
                "description": s.description,
                "duration_s": s.duration_s,
                "cut_type": s.cut_type,
            }
            for s in suite.shots
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path, suite: PromptSuite | None = None) -> ShotManifest:
    """Load a manifest JSON file; if a suite is given, validate the link."""
    data = _load_json(path)
    _require_fields(data, ("video_id", "model_id", "suite_id", "shots"), str(path))
    shots = []
    for raw in data["shots"]:
        _require_fields(raw, ("index", "duration_s"), f"{path} shot")
        shots.append(
            Shot(
                index=int(raw["index"]),
                duration_s=float(raw["duration_s"]),
                keyframes=tuple(raw.get("keyframes", ())),
                embedding_ref=raw.get("embedding_ref", ""),
                provenance=raw.get("provenance", "original"),
            )
        )
    manifest = ShotManifest(
        video_id=data["video_id"],
        model_id=data["model_id"],
        suite_id=data["suite_id"],
        shots=tuple(shots),
        metadata=dict(data.get("metadata", {})),
    )
    if suite is not None:
        if manifest.suite_id != suite.suite_id:
            raise ValidationError(
                f"manifest {manifest.video_id}: suite-link mismatch "
                f"({manifest.suite_id!r} != {suite.suite_id!r})"
            )
        if manifest.k != suite.k:
            raise ValidationError(
                f"manifest {manifest.video_id}: shot count mismatch "
                f"(manifest has {manifest.k} shots, suite expects {suite.k})"
            )
    return manifest


def save_manifest(manifest: ShotManifest, path: str | Path) -> None:
    """Write a manifest so that load_manifest round-trips it field for field."""
    payload = {
        "video_id": manifest.video_id,
        "model_id": manifest.model_id,
        "suite_id": manifest.suite_id,
        "metadata": manifest.metadata,
        "shots": [
            {
                "index": s.index,
                "duration_s": s.duration_s,
                "keyframes": list(s.keyframes),
                "embedding_ref": s.embedding_ref,
                "provenance": s.provenance,
            }
            for s in manifest.shots
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
