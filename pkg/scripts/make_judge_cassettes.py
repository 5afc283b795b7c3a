#!/usr/bin/env python3
"""Regenerate the shipped judge fixtures under tests/data/.

Writes the 13-shot suite/manifest pair, the 15-entry reference bank, and the
cassette files covering every request the judge pipeline issues for that
fixture. Run from the repo root after changing prompts or request shaping:

    python3 scripts/make_judge_cassettes.py
"""

from __future__ import annotations

import json
import re
import shutil
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from longshot.judge.client import ChatClient  # noqa: E402
from longshot.judge.pipeline import JudgeConfig, judge_score, load_reference_bank  # noqa: E402
from longshot.manifest import (  # noqa: E402
    Shot,
    ShotManifest,
    ShotPrompt,
    PromptSuite,
    load_manifest,
    load_prompt_suite,
    save_manifest,
    save_prompt_suite,
)

DATA = ROOT / "tests" / "data"
CASSETTES = DATA / "cassettes"

SHOT_BEATS = [
    "A fishing boat leaves a fog-covered harbor at dawn.",
    "The captain checks a creased photograph taped above the wheel.",
    "Gulls trail the boat as the nets are winched out.",
    "A sudden squall darkens the horizon line.",
    "Crew members scramble to secure crates on the pitching deck.",
    "The radio crackles with a distorted mayday from another vessel.",
    "The captain turns the boat toward the distress call.",
    "Searchlights sweep across whitecaps in driving rain.",
    "A life raft appears between the swells.",
    "Survivors are pulled aboard under flapping tarps.",
    "The storm breaks and a cold sun lights the deck.",
    "The rescued skipper recognizes the photo above the wheel.",
    "Both crews share coffee as the harbor lighthouse comes into view.",
]

THINK_SUMMARY = (
    "Visual richness: varied maritime settings across all thirteen shots. "
    "Temporal transition: the squall builds and resolves in a coherent order. "
    "Object/background consistency: the taped photograph and the boat's wheel "
    "persist across shots 2 and 12. Logic errors: none observed; the rescue "
    "chain of events is causally sound."
)

SCORE_RESPONSES = {
    0.3: "The narrative holds together and the rescue pays off the photo setup.\nscore: 4",
    0.4: '{"score": 4, "rationale": "consistent identities, minor pacing drift"}',
    0.5: "Strong causal chain and consistent identities throughout. Final score: 5",
}


def build_fixture_files() -> None:
    suite = PromptSuite(
        suite_id="suite-fixture-13",
        storyline=(
            "A fishing captain haunted by an old photograph answers a mayday "
            "during a squall and rescues the very skipper in the picture."
        ),
        shots=tuple(
            ShotPrompt(index=i, description=desc, duration_s=5.0, cut_type="cut")
            for i, desc in enumerate(SHOT_BEATS)
        ),
    )
    save_prompt_suite(suite, DATA / "suite_13.json")

    manifest = ShotManifest(
        video_id="fixture-video-13",
        model_id="fixture-model",
        suite_id=suite.suite_id,
        shots=tuple(
            Shot(
                index=i,
                duration_s=5.0,
                keyframes=tuple(f"frames/s{i:02d}_f{j}.png" for j in range(4)),
                embedding_ref=f"fixture:s{i:02d}",
            )
            for i in range(13)
        ),
        metadata={"resolution": "832x480", "fps": 15},
    )
    save_manifest(manifest, DATA / "manifest_13.json")

    bank = [
        {
            "video_id": f"ref-{i:02d}",
            "keyframes": [f"refs/ref-{i:02d}.png"],
            "human_score": [1, 2, 2.5, 3, 3, 3.5, 4, 4, 4.5, 5, 2, 3, 4, 5, 3.5][i],
            "rationale": f"reference clip {i:02d} with annotated long-range quality",
        }
        for i in range(15)
    ]
    (DATA / "ref_bank.json").write_text(
        json.dumps(bank, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def scripted_response(model: str, messages: list[dict], temperature: float, seed: int) -> str:
    first_text = ""
    image_paths = []
    for part in messages[0]["content"]:
        if part.get("type") == "text" and not first_text:
            first_text = part["text"]
        if part.get("type") == "image_url":
            image_paths.append(part["image_url"]["url"])
    if first_text.startswith("You are annotating one shot"):
        match = re.search(r"s(\d\d)_f0", image_paths[0])
        index = int(match.group(1))
        return f"Caption {index:02d}: {SHOT_BEATS[index]}"
    if "Analyze the video's long-range quality" in first_text:
        return THINK_SUMMARY
    if first_text.startswith("You are scoring the long-range quality"):
        return SCORE_RESPONSES[temperature]
    raise AssertionError(f"unexpected request starting with {first_text[:60]!r}")


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    if CASSETTES.exists():
        shutil.rmtree(CASSETTES)
    build_fixture_files()

    client = ChatClient(endpoint="http://unused.invalid", cassette_dir=CASSETTES, mode="record")
    client._http_post = scripted_response  # bypass the network; record the script

    suite = load_prompt_suite(DATA / "suite_13.json")
    manifest = load_manifest(DATA / "manifest_13.json", suite=suite)
    bank = load_reference_bank(DATA / "ref_bank.json")
    cfg = JudgeConfig(model_name="judge-model", seed=0, max_in_flight=1)
    transcript = judge_score(manifest, suite, bank, cfg, client)
    scores = [r.parsed_score for r in transcript.rounds]
    print(f"recorded {len(list(CASSETTES.iterdir()))} cassettes")
    print(f"round scores: {scores}, m_mllm = {transcript.m_mllm:.6f}")
    assert scores == [4.0, 4.0, 5.0], scores


if __name__ == "__main__":
    main()
