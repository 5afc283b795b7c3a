"""Benchmark runner pieces: suite building, rating ingestion, correlation and
ablation reports with deterministic CSV/JSON emission."""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import stats
from .errors import DegenerateInputError, ParseError, ServiceError, ValidationError
from .judge.client import ChatClient, image_part, text_part
from .judge.pipeline import JudgeConfig, _load_prompt
from .manifest import PromptSuite, ShotPrompt

DIMENSIONS = ("narrative", "causality", "consistency")

SUITE_MIN_SHOTS = 12
SUITE_MAX_SHOTS = 24
SUITE_SHOT_SECONDS = 5.0
SUITE_MIN_TOTAL_S = 60.0
SUITE_MAX_TOTAL_S = 120.0

# Table-1-style "human" score: mean over all ratings of a video, every
# annotator and dimension weighted equally. Flagged in emitted JSON reports.
AGGREGATION_NOTE = "human score = mean over all (annotator, dimension) ratings per video"


@dataclass(frozen=True)
class HumanRating:
    video_id: str
    annotator_id: str
    dimension: str
    score: int

    def __post_init__(self) -> None:
        if self.dimension not in DIMENSIONS:
            raise ValidationError(
                f"rating for {self.video_id}: unknown dimension {self.dimension!r}"
            )
        if self.score not in (1, 2, 3, 4, 5):
            raise ValidationError(
                f"rating ({self.video_id}, {self.annotator_id}, {self.dimension}): "
                f"score must be an integer 1..5, got {self.score}"
            )


def ingest_ratings(path: str | Path) -> list[HumanRating]:
    """Load a ratings CSV; every (video, annotator, dimension) triple must be unique."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["video_id", "annotator_id", "dimension", "score"]
        if reader.fieldnames != expected:
            raise ParseError(f"{path}: header must be {','.join(expected)}")
        ratings = []
        seen: set[tuple[str, str, str]] = set()
        for line_no, row in enumerate(reader, start=2):
            try:
                score = int(row["score"])
            except (TypeError, ValueError):
                raise ValidationError(
                    f"{path}:{line_no}: score {row['score']!r} is not an integer"
                ) from None
            rating = HumanRating(
                video_id=row["video_id"],
                annotator_id=row["annotator_id"],
                dimension=row["dimension"],
                score=score,
            )
            triple = (rating.video_id, rating.annotator_id, rating.dimension)
            if triple in seen:
                raise ValidationError(f"{path}:{line_no}: duplicate rating triple {triple}")
            seen.add(triple)
            ratings.append(rating)
    return ratings


def human_aggregate(
    table: Sequence[HumanRating], scope: str = "overall"
) -> dict[str, float] | dict[str, dict[str, float]]:
    """Per-video human scores: overall mean, or one mean per dimension."""
    if scope not in ("overall", "per-dimension"):
        raise ValidationError(f"unknown scope {scope!r}")
    by_video: dict[str, dict[str, list[int]]] = {}
    for rating in table:
        by_video.setdefault(rating.video_id, {}).setdefault(
            rating.dimension, []
        ).append(rating.score)
    for video_id, dims in by_video.items():
        missing = [d for d in DIMENSIONS if d not in dims]
        if missing:
            raise ValidationError(
                f"video {video_id} is missing the {missing[0]} dimension"
            )
    if scope == "overall":
        return {
            video_id: statistics.fmean(
                [s for scores in dims.values() for s in scores]
            )
            for video_id, dims in by_video.items()
        }
    return {
        video_id: {d: statistics.fmean(dims[d]) for d in DIMENSIONS}
        for video_id, dims in by_video.items()
    }


@dataclass(frozen=True)
class CorrelationReport:
    metric: str
    per_model: dict[str, float]
    overall_spearman: float
    overall_pearson: float
    group_sizes: dict[str, int]
    n_total: int


def correlate(
    metric_scores: Mapping[str, float],
    human_scores: Mapping[str, float],
    grouping: Mapping[str, str],
    metric_name: str = "metric",
) -> CorrelationReport:
    """Per-model rank correlation plus pooled rank and linear correlation."""
    ids = set(metric_scores)
    if ids != set(human_scores) or ids != set(grouping):
        raise ValidationError("misaligned video ids between scores, ratings and grouping")
    by_model: dict[str, list[str]] = {}
    for video_id in sorted(ids):
        by_model.setdefault(grouping[video_id], []).append(video_id)
    per_model = {}
    for model, videos in sorted(by_model.items()):
        if len(videos) < 3:
            raise ValidationError(
                f"group {model!r} has only {len(videos)} videos; need >= 3"
            )
        per_model[model] = stats.spearman(
            [metric_scores[v] for v in videos], [human_scores[v] for v in videos]
        )
    pooled_ids = sorted(ids)
    metric_pooled = [metric_scores[v] for v in pooled_ids]
    human_pooled = [human_scores[v] for v in pooled_ids]
    return CorrelationReport(
        metric=metric_name,
        per_model=per_model,
        overall_spearman=stats.spearman(metric_pooled, human_pooled),
        overall_pearson=stats.pearson(metric_pooled, human_pooled),
        group_sizes={m: len(v) for m, v in sorted(by_model.items())},
        n_total=len(pooled_ids),
    )


@dataclass(frozen=True)
class AblationReport:
    """Spearman of each sub-metric against each human dimension; None marks an
    undefined correlation (constant metric), rendered as n/a."""

    rows: dict[str, dict[str, float | None]]
    n_total: int


def ablate(
    dsa_scores: Mapping[str, float],
    mllm_scores: Mapping[str, float],
    fused_scores: Mapping[str, float],
    table: Sequence[HumanRating],
) -> AblationReport:
    per_dimension = human_aggregate(table, scope="per-dimension")
    rows: dict[str, dict[str, float | None]] = {}
    for metric_name, scores in (
        ("m_dsa", dsa_scores),
        ("m_mllm", mllm_scores),
        ("fused", fused_scores),
    ):
        if set(scores) != set(per_dimension):
            raise ValidationError(
                f"misaligned video ids between {metric_name} scores and ratings"
            )
        ids = sorted(scores)
        row: dict[str, float | None] = {}
        for dimension in DIMENSIONS:
            try:
                row[dimension] = stats.spearman(
                    [scores[v] for v in ids],
                    [per_dimension[v][dimension] for v in ids],
                )
            except DegenerateInputError:
                row[dimension] = None
        rows[metric_name] = row
    return AblationReport(rows=rows, n_total=len(per_dimension))


def _fmt3(value: float | None) -> str:
    if value is None:
        return "n/a"
    return f"{round(value, 3) + 0.0:.3f}"


def _correlation_csv(reports: Sequence[CorrelationReport]) -> str:
    models = sorted({m for r in reports for m in r.per_model})
    lines = ["metric," + ",".join(models) + ",overall_spearman,overall_pearson"]
    for report in reports:
        cells = [_fmt3(report.per_model.get(m)) for m in models]
        lines.append(
            ",".join(
                [report.metric, *cells, _fmt3(report.overall_spearman),
                 _fmt3(report.overall_pearson)]
            )
        )
    return "\n".join(lines) + "\n"


def _ablation_csv(report: AblationReport) -> str:
    lines = ["metric," + ",".join(DIMENSIONS)]
    for metric_name, row in report.rows.items():
        lines.append(
            ",".join([metric_name, *(_fmt3(row[d]) for d in DIMENSIONS)])
        )
    return "\n".join(lines) + "\n"


def emit_report(
    report: CorrelationReport | Sequence[CorrelationReport] | AblationReport,
    path: str | Path,
    format: str = "json",
) -> None:
    """Write a report deterministically: 3-decimal CSV or full-precision JSON."""
    if format not in ("csv", "json"):
        raise ValidationError(f"unsupported report format {format!r}")
    if isinstance(report, CorrelationReport):
        reports: Sequence[CorrelationReport] | AblationReport = [report]
    else:
        reports = report
    if format == "csv":
        if isinstance(reports, AblationReport):
            text = _ablation_csv(reports)
        else:
            text = _correlation_csv(reports)
    else:
        if isinstance(reports, AblationReport):
            payload: dict = {
                "kind": "ablation",
                "rows": reports.rows,
                "n_total": reports.n_total,
            }
        else:
            payload = {
                "kind": "correlation",
                "reports": [
                    {
                        "metric": r.metric,
                        "per_model": r.per_model,
                        "overall_spearman": r.overall_spearman,
                        "overall_pearson": r.overall_pearson,
                        "group_sizes": r.group_sizes,
                        "n_total": r.n_total,
                    }
                    for r in reports
                ],
            }
        payload["notes"] = AGGREGATION_NOTE
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _parse_shot_list(text: str) -> list[dict]:
    candidates = [text.strip()]
    start, end = text.find("["), text.rfind("]")
    if start != -1 and end > start:
        candidates.append(text[start : end + 1])
    for candidate in candidates:
        try:
            data = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(data, list) and all(isinstance(item, dict) for item in data):
            return data
    raise ParseError("decomposition response is not a JSON array of shot objects")


def build_suite(
    seed_frame: str, cfg: JudgeConfig, client: ChatClient
) -> PromptSuite:
    """Story seed from one frame, then a 12-24 shot decomposition at 5 s per shot.

    A decomposition outside the bounds is reprompted once, then rejected.
    """
    storyline_messages = [
        {
            "role": "user",
            "content": [text_part(_load_prompt("storyline")), image_part(seed_frame)],
        }
    ]
    storyline = client.complete(
        cfg.model_name, storyline_messages, temperature=0.0, seed=cfg.seed
    ).strip()
    if not storyline:
        raise ServiceError("storyline stage returned empty text")

    decompose_body = f"{_load_prompt('decompose')}\n\nStory outline:\n{storyline}"
    messages = [{"role": "user", "content": [text_part(decompose_body)]}]
    response = client.complete(cfg.model_name, messages, temperature=0.0, seed=cfg.seed)
    raw_shots = _parse_shot_list(response)
    if not SUITE_MIN_SHOTS <= len(raw_shots) <= SUITE_MAX_SHOTS:
        retry_messages = messages + [
            {"role": "assistant", "content": response},
            {
                "role": "user",
                "content": [
                    text_part(
                        f"Your decomposition had {len(raw_shots)} shots. Re-emit the "
                        f"JSON array with between {SUITE_MIN_SHOTS} and "
                        f"{SUITE_MAX_SHOTS} shots."
                    )
                ],
            },
        ]
        response = client.complete(
            cfg.model_name, retry_messages, temperature=0.0, seed=cfg.seed
        )
        raw_shots = _parse_shot_list(response)
        if not SUITE_MIN_SHOTS <= len(raw_shots) <= SUITE_MAX_SHOTS:
            raise ValidationError(
                f"decomposition outside bounds after reprompt: {len(raw_shots)} shots"
            )

    shots = tuple(
        ShotPrompt(
            index=i,
            description=item.get("description", ""),
            duration_s=SUITE_SHOT_SECONDS,
            cut_type=item.get("cut_type", "cut"),
        )
        for i, item in enumerate(raw_shots)
    )
    suite = PromptSuite(
        suite_id="suite-" + hashlib.sha256(storyline.encode("utf-8")).hexdigest()[:10],
        storyline=storyline,
        shots=shots,
        target_total_s=SUITE_SHOT_SECONDS * len(shots),
    )
    total = suite.total_duration_s
    if not SUITE_MIN_TOTAL_S <= total <= SUITE_MAX_TOTAL_S:
        raise ValidationError(f"suite duration {total} s outside [60, 120] s")
    return suite
