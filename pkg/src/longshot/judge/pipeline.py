"""Three-stage judge pipeline: caption each shot, analyze, score over n rounds.

Round scores on the 1-5 scale are averaged and mapped to [0, 1]. Reference
videos with human scores are injected in-context each round so the judge's
scale stays anchored; the reference draw is a pure function of the seed and
round index.
"""

from __future__ import annotations

import hashlib
import json
import re
import shlex
import statistics
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from ..errors import LongshotError, ParseError, ServiceError, ValidationError
from ..manifest import PromptSuite, Shot, ShotManifest
from ..rand import draw, seeded_rng
from .client import ChatClient, image_part, text_part


class RoundFailedError(LongshotError):
    """A scoring round produced no parseable score after one reprompt."""


class AllRoundsFailedError(ServiceError):
    """Every scoring round failed; no score can be reported."""


def _load_prompt(name: str) -> str:
    return resources.files(__package__).joinpath(f"prompts/{name}.txt").read_text("utf-8")


PROMPT_NAMES = ("caption", "think", "score", "score_reprompt", "storyline", "decompose")
PROMPTS_VERSION = hashlib.sha256(
    "\x00".join(_load_prompt(n) for n in PROMPT_NAMES).encode("utf-8")
).hexdigest()[:12]


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: str | None = None
    model_name: str = "judge-model"
    rounds: int = 3
    temperatures: tuple[float, ...] = (0.3, 0.4, 0.5)
    refs_per_round: int = 3
    frames_per_shot: int = 4
    seed: int = 0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValidationError(f"rounds must be >= 1, got {self.rounds}")
        if len(self.temperatures) != self.rounds:
            raise ValidationError(
                f"temperatures has {len(self.temperatures)} entries for {self.rounds} rounds"
            )
        if self.refs_per_round < 1:
            raise ValidationError("refs_per_round must be >= 1")
        if self.frames_per_shot < 1:
            raise ValidationError("frames_per_shot must be >= 1")


@dataclass(frozen=True)
class ReferenceExample:
    video_id: str
    keyframes: tuple[str, ...]
    human_score: float
    rationale: str = ""

    def __post_init__(self) -> None:
        if not 1.0 <= self.human_score <= 5.0 or (2 * self.human_score) % 1 != 0:
            raise ValidationError(
                f"reference {self.video_id}: human_score must be in 1..5 "
                f"(halves allowed), got {self.human_score}"
            )


@dataclass(frozen=True)
class ReferenceBank:
    entries: tuple[ReferenceExample, ...]

    def __post_init__(self) -> None:
        ids = [e.video_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("reference bank has duplicate video ids")

    def __len__(self) -> int:
        return len(self.entries)


def load_reference_bank(path: str | Path) -> ReferenceBank:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    entries = tuple(
        ReferenceExample(
            video_id=raw["video_id"],
            keyframes=tuple(raw.get("keyframes", ())),
            human_score=float(raw["human_score"]),
            rationale=raw.get("rationale", ""),
        )
        for raw in data
    )
    return ReferenceBank(entries)


@dataclass(frozen=True)
class RoundRecord:
    temperature: float
    reference_ids: tuple[str, ...]
    raw_response: str
    parsed_score: float | None
    failed: bool = False
    error: str | None = None


@dataclass(frozen=True)
class JudgeTranscript:
    captions: tuple[str, ...]
    summary: str
    rounds: tuple[RoundRecord, ...]
    m_mllm: float
    partial_failure: bool = False
    prompts_version: str = PROMPTS_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def mllm_normalize(mean_score: float) -> float:
    """Affine map from the 1-5 judge scale to [0, 1]."""
    if not 1.0 <= mean_score <= 5.0:
        raise ValidationError(f"mean score {mean_score} outside [1, 5]")
    return (mean_score - 1.0) / 4.0


def parse_score(text: str) -> float:
    """Extract a 1-5 score: a JSON "score" field wins, else the last
    number in range following the token "score"."""
    obj = _try_json_object(text)
    if obj is not None and "score" in obj:
        try:
            value = float(obj["score"])
        except (TypeError, ValueError):
            value = None
        if value is not None and 1.0 <= value <= 5.0:
            return value
    candidates = [
        float(m)
        for m in re.findall(r"score\D{0,12}?(\d+(?:\.\d+)?)", text, flags=re.IGNORECASE)
        if 1.0 <= float(m) <= 5.0
    ]
    if candidates:
        return candidates[-1]
    raise ParseError("no score in [1, 5] found in response")


def _try_json_object(text: str) -> dict | None:
    text = text.strip()
    for candidate in (text, text[text.find("{") : text.rfind("}") + 1]):
        if not candidate:
            continue
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def evenly_spaced(items: Sequence[str], n: int) -> list[str]:
    """Up to n items sampled at uniform spacing, endpoints included."""
    if n >= len(items):
        return list(items)
    if n == 1:
        return [items[0]]
    span = len(items) - 1
    return [items[round(i * span / (n - 1))] for i in range(n)]


def _shot_frames(shot: Shot, n: int) -> list[str]:
    if not shot.keyframes:
        raise ValidationError(f"shot {shot.index} has no keyframes")
    return evenly_spaced(shot.keyframes, n)


def caption_shots(
    manifest: ShotManifest, cfg: JudgeConfig, client: ChatClient
) -> list[str]:
    """One caption per shot, order-aligned with the manifest."""
    template = _load_prompt("caption")

    def one(shot: Shot) -> str:
        frames = _shot_frames(shot, cfg.frames_per_shot)
        messages = [
            {
                "role": "user",
                "content": [text_part(template)] + [image_part(p) for p in frames],
            }
        ]
        caption = client.complete(
            cfg.model_name, messages, temperature=0.0, seed=cfg.seed
        ).strip()
        if not caption:
            raise ServiceError(f"empty caption for shot {shot.index}")
        return caption

    for shot in manifest.shots:
        if not shot.keyframes:
            raise ValidationError(f"shot {shot.index} has no keyframes")
    if cfg.max_in_flight > 1 and manifest.k > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            return list(pool.map(one, manifest.shots))
    return [one(shot) for shot in manifest.shots]


def _numbered(lines: Sequence[str]) -> str:
    return "\n".join(f"{i + 1}. {line}" for i, line in enumerate(lines))


def think(
    suite: PromptSuite, captions: Sequence[str], cfg: JudgeConfig, client: ChatClient
) -> str:
    """Structured analysis of intended prompts vs. observed captions."""
    if len(captions) != suite.k:
        raise ValidationError(
            f"captions length {len(captions)} != suite K {suite.k}"
        )
    body = "\n\n".join(
        [
            _load_prompt("think"),
            f"Storyline:\n{suite.storyline}",
            "Intended shot prompts:\n" + _numbered([s.description for s in suite.shots]),
            "Observed captions:\n" + _numbered(list(captions)),
        ]
    )
    messages = [{"role": "user", "content": [text_part(body)]}]
    summary = client.complete(cfg.model_name, messages, temperature=0.0, seed=cfg.seed)
    if not summary.strip():
        raise ServiceError("judge returned an empty analysis summary")
    return summary


def sample_references(
    bank: ReferenceBank, seed: int, round_index: int, k: int
) -> list[ReferenceExample]:
    """Draw k references without replacement; depends only on (seed, round, bank ids)."""
    if k > len(bank):
        raise ValidationError(f"cannot draw {k} references from a bank of {len(bank)}")
    by_id = {e.video_id: e for e in bank.entries}
    ids = sorted(by_id)
    rng = seeded_rng("refs", seed, round_index, *ids)
    return [by_id[i] for i in draw(rng, ids, k)]


def _score_messages(
    manifest: ShotManifest,
    suite: PromptSuite,
    summary: str,
    refs: Sequence[ReferenceExample],
    cfg: JudgeConfig,
) -> list[dict]:
    parts = [
        text_part(
            "\n\n".join(
                [
                    _load_prompt("score"),
                    f"Storyline:\n{suite.storyline}",
                    "Shot prompts:\n" + _numbered([s.description for s in suite.shots]),
                    f"Analyst summary:\n{summary}",
                    "Frames sampled from the target video, in order:",
                ]
            )
        )
    ]
    for shot in manifest.shots:
        parts.append(image_part(_shot_frames(shot, 1)[0]))
    for ref in refs:
        parts.append(
            text_part(
                f"Reference video {ref.video_id} (human score {ref.human_score}): "
                f"{ref.rationale}"
            )
        )
        if ref.keyframes:
            parts.append(image_part(ref.keyframes[0]))
    parts.append(text_part("Now score the target video."))
    return [{"role": "user", "content": parts}]


def score_round(
    manifest: ShotManifest,
    suite: PromptSuite,
    summary: str,
    refs: Sequence[ReferenceExample],
    temperature: float,
    cfg: JudgeConfig,
    client: ChatClient,
) -> RoundRecord:
    """One scoring round; a parse failure earns one reprompt, then the round fails."""
    messages = _score_messages(manifest, suite, summary, refs, cfg)
    ref_ids = tuple(r.video_id for r in refs)
    response = client.complete(cfg.model_name, messages, temperature, seed=cfg.seed)
    try:
        return RoundRecord(temperature, ref_ids, response, parse_score(response))
    except ParseError:
        pass
    retry_messages = messages + [
        {"role": "assistant", "content": response},
        {"role": "user", "content": [text_part(_load_prompt("score_reprompt"))]},
    ]
    retry = client.complete(cfg.model_name, retry_messages, temperature, seed=cfg.seed)
    try:
        return RoundRecord(temperature, ref_ids, retry, parse_score(retry))
    except ParseError as exc:
        return RoundRecord(
            temperature, ref_ids, retry, None, failed=True, error=str(exc)
        )


def judge_score(
    manifest: ShotManifest,
    suite: PromptSuite,
    bank: ReferenceBank,
    cfg: JudgeConfig,
    client: ChatClient,
) -> JudgeTranscript:
    """Full pipeline: caption once, analyze once, then n scored rounds."""
    if not bank.entries:
        raise ValidationError("reference bank is empty")
    if cfg.refs_per_round > len(bank):
        raise ValidationError(
            f"refs_per_round {cfg.refs_per_round} exceeds bank size {len(bank)}"
        )
    captions = caption_shots(manifest, cfg, client)
    summary = think(suite, captions, cfg, client)
    rounds = []
    for index in range(cfg.rounds):
        refs = sample_references(bank, cfg.seed, index, cfg.refs_per_round)
        rounds.append(
            score_round(
                manifest, suite, summary, refs, cfg.temperatures[index], cfg, client
            )
        )
    scores = [r.parsed_score for r in rounds if not r.failed and r.parsed_score is not None]
    if not scores:
        raise AllRoundsFailedError("all scoring rounds failed to produce a score")
    return JudgeTranscript(
        captions=tuple(captions),
        summary=summary,
        rounds=tuple(rounds),
        m_mllm=mllm_normalize(statistics.fmean(scores)),
        partial_failure=len(scores) < cfg.rounds,
    )


def extract_keyframes(
    video: str | Path,
    timestamps: Sequence[float],
    out_dir: str | Path,
    command_template: str,
    suffix: str = ".png",
) -> list[Path]:
    """Shell out to an external frame extractor once per timestamp.

    The template receives {video}, {t} and {out}; {out} is an extension-less
    stem, so templates are written like "<tool> -i {video} -ss {t} -frames 1
    {out}.png" with the suffix matching ``suffix``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, t in enumerate(timestamps):
        stem = out_dir / f"frame_{i:04d}"
        command = shlex.split(
            command_template.format(
                video=shlex.quote(str(video)), t=t, out=shlex.quote(str(stem))
            )
        )
        result = subprocess.run(command, capture_output=True, text=True)
        if result.returncode != 0:
            raise ServiceError(
                f"keyframe extraction failed at t={t}: {result.stderr.strip()}"
            )
        produced = stem.with_suffix(suffix)
        if not produced.exists():
            raise ServiceError(f"keyframe extraction produced no file at {produced}")
        paths.append(produced)
    return paths


CaptionFn = Callable[[Shot], str]


def make_shot_captioner(cfg: JudgeConfig, client: ChatClient) -> CaptionFn:
    """Captioner handle over the judge service, for use by corruption operators."""
    template = _load_prompt("caption")

    def caption(shot: Shot) -> str:
        frames = _shot_frames(shot, cfg.frames_per_shot)
        messages = [
            {
                "role": "user",
                "content": [text_part(template)] + [image_part(p) for p in frames],
            }
        ]
        return client.complete(cfg.model_name, messages, temperature=0.0, seed=cfg.seed).strip()

    return caption
