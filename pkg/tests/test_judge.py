import json
import stat
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from longshot.errors import ParseError, ServiceError, ValidationError
from longshot.judge import (
    AllRoundsFailedError,
    ChatClient,
    JudgeConfig,
    ReferenceBank,
    ReferenceExample,
    canonical_request,
    caption_shots,
    evenly_spaced,
    extract_keyframes,
    judge_score,
    mllm_normalize,
    parse_score,
    request_hash,
    sample_references,
    score_round,
    think,
)
from longshot.manifest import Shot

# ---------------------------------------------------------------------------
# parse_score


@pytest.mark.parametrize(
    "text,expected",
    [
        ("Final score: 4", 4.0),
        ("I considered 7 shots. score: 2", 2.0),
        ('{"score": 3.5, "rationale": "ok"}', 3.5),
        ('Sure, here you go: {"score": 4}', 4.0),
        ("Score:5", 5.0),
        ("the score is 4.5 out of 5", 4.5),
        ("score was 1, final answer", 1.0),
    ],
)
def test_parse_score_cases(text, expected):
    assert parse_score(text) == expected


@pytest.mark.parametrize(
    "text",
    ["great video!", "score: 9", "we saw 3 boats", '{"rating": 4}', ""],
)
def test_parse_score_rejects(text):
    with pytest.raises(ParseError):
        parse_score(text)


def test_parse_score_takes_last_score_adjacent_number():
    assert parse_score("score draft: 2 ... revised score: 3") == 3.0


# ---------------------------------------------------------------------------
# config and bank validation


def test_config_temperature_count_must_match_rounds():
    with pytest.raises(ValidationError, match="temperatures"):
        JudgeConfig(rounds=2)


def test_reference_score_validation():
    with pytest.raises(ValidationError, match="human_score"):
        ReferenceExample(video_id="r", keyframes=(), human_score=4.2)
    ReferenceExample(video_id="r", keyframes=(), human_score=4.5)  # halves allowed


def test_bank_rejects_duplicate_ids():
    entry = ReferenceExample(video_id="dup", keyframes=(), human_score=3)
    with pytest.raises(ValidationError, match="duplicate"):
        ReferenceBank((entry, entry))


def test_mllm_normalize_endpoints():
    assert mllm_normalize(1.0) == 0.0
    assert mllm_normalize(3.0) == 0.5
    assert mllm_normalize(5.0) == 1.0


def test_evenly_spaced():
    items = [str(i) for i in range(9)]
    assert evenly_spaced(items, 4) == ["0", "3", "5", "8"]
    assert evenly_spaced(items, 20) == items
    assert evenly_spaced(items, 1) == ["0"]


# ---------------------------------------------------------------------------
# reference sampling


def test_reference_sampling_reproducible(fixture_bank):
    a = sample_references(fixture_bank, seed=0, round_index=1, k=3)
    b = sample_references(fixture_bank, seed=0, round_index=1, k=3)
    assert [r.video_id for r in a] == [r.video_id for r in b]


def test_reference_sampling_varies_by_round(fixture_bank):
    draws = {
        tuple(r.video_id for r in sample_references(fixture_bank, 0, i, 3))
        for i in range(6)
    }
    assert len(draws) > 1


def test_reference_sampling_without_replacement(fixture_bank):
    refs = sample_references(fixture_bank, seed=5, round_index=0, k=10)
    ids = [r.video_id for r in refs]
    assert len(set(ids)) == len(ids)


def test_reference_sampling_rejects_oversized_draw(fixture_bank):
    with pytest.raises(ValidationError, match="cannot draw"):
        sample_references(fixture_bank, 0, 0, len(fixture_bank) + 1)


# ---------------------------------------------------------------------------
# replayed pipeline (shipped cassettes)


def test_judge_score_replays_recorded_rounds(
    fixture_manifest, fixture_suite, fixture_bank, replay_client, judge_cfg
):
    transcript = judge_score(
        fixture_manifest, fixture_suite, fixture_bank, judge_cfg, replay_client
    )
    assert [r.parsed_score for r in transcript.rounds] == [4.0, 4.0, 5.0]
    assert transcript.m_mllm == pytest.approx((13 / 3 - 1) / 4, abs=1e-12)
    assert not transcript.partial_failure
    assert replay_client.network_calls == 0


def test_judge_score_byte_stable_across_runs(
    fixture_manifest, fixture_suite, fixture_bank, judge_cfg
):
    from tests.conftest import CASSETTE_DIR

    payloads = set()
    for _ in range(3):
        client = ChatClient(cassette_dir=CASSETTE_DIR, mode="replay")
        transcript = judge_score(
            fixture_manifest, fixture_suite, fixture_bank, judge_cfg, client
        )
        payloads.add(transcript.to_json().encode())
        assert client.network_calls == 0
    assert len(payloads) == 1


def test_caption_shots_order_aligned(fixture_manifest, judge_cfg, replay_client):
    captions = caption_shots(fixture_manifest, judge_cfg, replay_client)
    assert len(captions) == 13
    for i, caption in enumerate(captions):
        assert caption.startswith(f"Caption {i:02d}:")


def test_caption_shots_concurrent_matches_sequential(fixture_manifest, replay_client):
    sequential = caption_shots(
        fixture_manifest, JudgeConfig(seed=0, max_in_flight=1), replay_client
    )
    concurrent = caption_shots(
        fixture_manifest, JudgeConfig(seed=0, max_in_flight=8), replay_client
    )
    assert sequential == concurrent


def test_caption_shot_without_keyframes_names_index(judge_cfg, replay_client, fixture_manifest):
    shots = list(fixture_manifest.shots)
    shots[5] = Shot(index=5, duration_s=5.0, keyframes=(), embedding_ref="x")
    broken = fixture_manifest.with_shots(shots)
    with pytest.raises(ValidationError, match="shot 5 has no keyframes"):
        caption_shots(broken, judge_cfg, replay_client)


def test_think_requires_matching_caption_count(fixture_suite, judge_cfg, replay_client):
    with pytest.raises(ValidationError, match="captions length"):
        think(fixture_suite, ["only one"], judge_cfg, replay_client)


def test_replay_missing_cassette_errors_without_network(tmp_path, judge_cfg, fixture_manifest):
    client = ChatClient(cassette_dir=tmp_path, mode="replay")
    with pytest.raises(ServiceError, match="no cassette"):
        caption_shots(fixture_manifest, judge_cfg, client)
    assert client.network_calls == 0


def test_refs_per_round_bounded_by_bank(fixture_manifest, fixture_suite, judge_cfg, replay_client):
    tiny = ReferenceBank(
        (ReferenceExample(video_id="only", keyframes=(), human_score=3),)
    )
    with pytest.raises(ValidationError, match="refs_per_round"):
        judge_score(fixture_manifest, fixture_suite, tiny, judge_cfg, replay_client)


# ---------------------------------------------------------------------------
# score_round parse fallback via synthetic cassettes


class ScriptedClient(ChatClient):
    """Replays a canned response sequence without cassettes or network."""

    def __init__(self, responses):
        super().__init__(endpoint="http://unused.invalid", mode="live")
        self._responses = list(responses)
        self.requests = []

    def _http_post(self, model, messages, temperature, seed):
        self.requests.append(messages)
        return self._responses.pop(0)


def refs_of(*scores):
    return [
        ReferenceExample(video_id=f"r{i}", keyframes=(), human_score=s)
        for i, s in enumerate(scores)
    ]


def test_score_round_reprompts_once_then_succeeds(fixture_manifest, fixture_suite, judge_cfg):
    client = ScriptedClient(["no number here", "after review, score: 3"])
    record = score_round(
        fixture_manifest, fixture_suite, "summary", refs_of(3, 4), 0.3, judge_cfg, client
    )
    assert record.parsed_score == 3.0
    assert not record.failed
    assert len(client.requests) == 2
    # the reprompt keeps the original exchange and appends the repair request
    assert client.requests[1][1]["role"] == "assistant"


def test_score_round_fails_after_second_parse_error(fixture_manifest, fixture_suite, judge_cfg):
    client = ScriptedClient(["nothing", "still nothing"])
    record = score_round(
        fixture_manifest, fixture_suite, "summary", refs_of(3), 0.3, judge_cfg, client
    )
    assert record.failed
    assert record.parsed_score is None


def test_judge_score_partial_failure_averages_successes(
    fixture_manifest, fixture_suite, fixture_bank, judge_cfg
):
    responses = [f"Caption {i:02d}" for i in range(13)] + ["summary text"]
    responses += ["score: 4", "garbled", "still garbled", "score: 2"]
    client = ScriptedClient(responses)
    transcript = judge_score(fixture_manifest, fixture_suite, fixture_bank, judge_cfg, client)
    assert transcript.partial_failure
    assert transcript.m_mllm == pytest.approx((3.0 - 1) / 4)


def test_judge_score_all_rounds_failed(
    fixture_manifest, fixture_suite, fixture_bank, judge_cfg
):
    responses = [f"Caption {i:02d}" for i in range(13)] + ["summary text"]
    responses += ["bad", "bad", "bad", "bad", "bad", "bad"]
    client = ScriptedClient(responses)
    with pytest.raises(AllRoundsFailedError):
        judge_score(fixture_manifest, fixture_suite, fixture_bank, judge_cfg, client)


# ---------------------------------------------------------------------------
# client cache and cassette mechanics


def test_canonical_request_is_key_order_independent():
    a = canonical_request("m", [{"role": "user", "content": "x"}], 0.3, 1)
    b = canonical_request("m", [{"content": "x", "role": "user"}], 0.3, 1)
    assert request_hash(a) == request_hash(b)


def test_record_mode_writes_cassette_and_caches(tmp_path):
    calls = {"n": 0}

    class RecordingClient(ChatClient):
        def _http_post(self, model, messages, temperature, seed):
            calls["n"] += 1
            return "recorded response"

    client = RecordingClient(
        endpoint="http://unused.invalid", cassette_dir=tmp_path, mode="record"
    )
    messages = [{"role": "user", "content": "hi"}]
    first = client.complete("m", messages, 0.3)
    second = client.complete("m", messages, 0.3)
    assert first == second == "recorded response"
    assert calls["n"] == 1  # cache hit on the repeat
    cassettes = list(tmp_path.iterdir())
    assert len(cassettes) == 1
    payload = json.loads(cassettes[0].read_text())
    assert payload["response_text"] == "recorded response"
    assert payload["request_hash"] == cassettes[0].stem

    # a fresh replay-mode client serves the recorded cassette with no network
    replayer = ChatClient(cassette_dir=tmp_path, mode="replay")
    assert replayer.complete("m", messages, 0.3) == "recorded response"
    assert replayer.network_calls == 0


def test_distinct_temperature_is_distinct_request(tmp_path):
    class RecordingClient(ChatClient):
        def _http_post(self, model, messages, temperature, seed):
            return f"t={temperature}"

    client = RecordingClient(
        endpoint="http://unused.invalid", cassette_dir=tmp_path, mode="record"
    )
    messages = [{"role": "user", "content": "hi"}]
    assert client.complete("m", messages, 0.3) != client.complete("m", messages, 0.4)
    assert len(list(tmp_path.iterdir())) == 2


def test_client_mode_validation(tmp_path):
    with pytest.raises(ValidationError, match="unknown client mode"):
        ChatClient(mode="playback")
    with pytest.raises(ValidationError, match="requires an endpoint"):
        ChatClient(mode="record", cassette_dir=tmp_path)
    with pytest.raises(ValidationError, match="cassette directory"):
        ChatClient(mode="record", endpoint="http://x.invalid")


# ---------------------------------------------------------------------------
# live HTTP path against a stub service


class _JudgeStub(BaseHTTPRequestHandler):
    fail_next = 0

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if type(self).fail_next > 0:
            type(self).fail_next -= 1
            self.send_response(503)
            self.end_headers()
            return
        content = f"echo model={body['model']} t={body['temperature']} score: 4"
        payload = json.dumps(
            {"choices": [{"message": {"content": content}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def judge_stub():
    server = HTTPServer(("127.0.0.1", 0), _JudgeStub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _JudgeStub.fail_next = 0
    yield f"http://127.0.0.1:{server.server_port}/chat"
    server.shutdown()


def test_live_mode_round_trip(judge_stub):
    client = ChatClient(endpoint=judge_stub, mode="live")
    text = client.complete("model-x", [{"role": "user", "content": "hello"}], 0.3)
    assert text == "echo model=model-x t=0.3 score: 4"
    assert client.network_calls == 1


def test_live_mode_retries_then_succeeds(judge_stub):
    _JudgeStub.fail_next = 1
    client = ChatClient(endpoint=judge_stub, mode="live", retries=2)
    text = client.complete("m", [{"role": "user", "content": "x"}], 0.3)
    assert text.endswith("score: 4")
    assert client.network_calls == 2


def test_live_mode_gives_up(judge_stub):
    _JudgeStub.fail_next = 10
    client = ChatClient(endpoint=judge_stub, mode="live", retries=1)
    with pytest.raises(ServiceError, match="unavailable"):
        client.complete("m", [{"role": "user", "content": "x"}], 0.3)


# ---------------------------------------------------------------------------
# keyframe extraction external command


def test_extract_keyframes_with_fake_tool(tmp_path):
    tool = tmp_path / "fake_extract.sh"
    tool.write_text("#!/bin/sh\n# args: video timestamp out-stem\ntouch \"$3.png\"\n")
    tool.chmod(tool.stat().st_mode | stat.S_IEXEC)
    out_dir = tmp_path / "frames"
    paths = extract_keyframes(
        "video.mp4", [0.0, 2.5, 5.0], out_dir, f"{tool} {{video}} {{t}} {{out}}"
    )
    assert [p.name for p in paths] == ["frame_0000.png", "frame_0001.png", "frame_0002.png"]
    assert all(p.exists() for p in paths)


def test_extract_keyframes_command_failure(tmp_path):
    with pytest.raises(ServiceError, match="keyframe extraction failed"):
        extract_keyframes("v.mp4", [0.0], tmp_path, "false {video} {t} {out}")


def test_extract_keyframes_missing_output(tmp_path):
    with pytest.raises(ServiceError, match="produced no file"):
        extract_keyframes("v.mp4", [0.0], tmp_path, "true {video} {t} {out}")
