"""Chat-completions client with request hashing, disk cassettes, and replay.

Every request is canonicalized to JSON and hashed; the hash keys both the
in-memory cache and the on-disk cassette file. In replay mode a missing
cassette is an error and the client never touches the network, which makes
pipelines bit-deterministic and free to run in CI.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path

import requests

from ..errors import ServiceError, ValidationError

MODES = ("replay", "record", "live")


def canonical_request(
    model: str, messages: list[dict], temperature: float, seed: int
) -> str:
    payload = {
        "model": model,
        "messages": messages,
        "temperature": temperature,
        "seed": seed,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def request_hash(canonical: str) -> str:
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ChatClient:
    """Client for a chat-completions-style service.

    Modes: "replay" serves cassettes only (zero network calls), "record"
    calls the service on a cassette miss and writes the cassette, "live"
    skips cassettes entirely but still uses the in-memory cache.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        cassette_dir: str | Path | None = None,
        mode: str = "replay",
        token_env: str = "LONGSHOT_JUDGE_TOKEN",
        retries: int = 2,
        timeout: float = 60.0,
    ):
        if mode not in MODES:
            raise ValidationError(f"unknown client mode {mode!r}; expected one of {MODES}")
        if mode != "replay" and not endpoint:
            raise ValidationError(f"mode {mode!r} requires an endpoint")
        if mode != "live" and cassette_dir is None:
            raise ValidationError(f"mode {mode!r} requires a cassette directory")
        self.endpoint = endpoint
        self.cassette_dir = Path(cassette_dir) if cassette_dir else None
        self.mode = mode
        self.token_env = token_env
        self.retries = retries
        self.timeout = timeout
        self.network_calls = 0
        self._session = requests.Session()
        self._cache: dict[str, str] = {}
        self._lock = threading.Lock()

    def _cassette_path(self, digest: str) -> Path:
        assert self.cassette_dir is not None
        return self.cassette_dir / f"{digest}.json"

    def _read_cassette(self, digest: str) -> str | None:
        path = self._cassette_path(digest)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)["response_text"]

    def _write_cassette(self, digest: str, canonical: str, response_text: str) -> None:
        assert self.cassette_dir is not None
        self.cassette_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "request_hash": digest,
            "canonical_request": json.loads(canonical),
            "response_text": response_text,
        }
        with open(self._cassette_path(digest), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _http_post(self, model: str, messages: list[dict], temperature: float, seed: int) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {"model": model, "messages": messages, "temperature": temperature, "seed": seed}
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                self.network_calls += 1
                response = self._session.post(
                    self.endpoint, json=body, headers=headers, timeout=self.timeout
                )
                if response.status_code in (429, 500, 502, 503, 504):
                    last_error = ServiceError(f"judge service returned {response.status_code}")
                    continue
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError, IndexError) as exc:
                last_error = exc
        raise ServiceError(
            f"judge service unavailable after {self.retries + 1} attempts: {last_error}"
        )

    def complete(
        self, model: str, messages: list[dict], temperature: float, seed: int = 0
    ) -> str:
        """One completion; identical canonical requests hit cache and cassettes."""
        canonical = canonical_request(model, messages, temperature, seed)
        digest = request_hash(canonical)
        with self._lock:
            if digest in self._cache:
                return self._cache[digest]
        if self.mode != "live":
            recorded = self._read_cassette(digest)
            if recorded is not None:
                with self._lock:
                    self._cache[digest] = recorded
                return recorded
            if self.mode == "replay":
                raise ServiceError(
                    f"no cassette for request {digest[:12]}; replay mode performs "
                    "no network calls"
                )
        text = self._http_post(model, messages, temperature, seed)
        if self.mode == "record":
            self._write_cassette(digest, canonical, text)
        with self._lock:
            self._cache[digest] = text
        return text


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(path: str) -> dict:
    # Chat-completions-style image reference; the service resolves the URL/path.
    return {"type": "image_url", "image_url": {"url": path}}
