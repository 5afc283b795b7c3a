"""MLLM-as-judge pipeline: chat client, cassettes, and the caption/think/score stages."""

from .client import ChatClient, canonical_request, image_part, request_hash, text_part
from .pipeline import (
    PROMPTS_VERSION,
    AllRoundsFailedError,
    JudgeConfig,
    JudgeTranscript,
    ReferenceBank,
    ReferenceExample,
    RoundFailedError,
    RoundRecord,
    caption_shots,
    evenly_spaced,
    extract_keyframes,
    judge_score,
    load_reference_bank,
    make_shot_captioner,
    mllm_normalize,
    parse_score,
    sample_references,
    score_round,
    think,
)

__all__ = [
    "AllRoundsFailedError",
    "ChatClient",
    "JudgeConfig",
    "JudgeTranscript",
    "PROMPTS_VERSION",
    "ReferenceBank",
    "ReferenceExample",
    "RoundFailedError",
    "RoundRecord",
    "canonical_request",
    "caption_shots",
    "evenly_spaced",
    "extract_keyframes",
    "image_part",
    "judge_score",
    "load_reference_bank",
    "make_shot_captioner",
    "mllm_normalize",
    "parse_score",
    "request_hash",
    "sample_references",
    "score_round",
    "text_part",
    "think",
]
