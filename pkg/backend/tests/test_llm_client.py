from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

from app.services import llm_client
from app.services.errors import CassetteMiss, EndpointError, MalformedDocument
from app.services.llm_client import Cassette, ChatEndpoint, TokenBucket


def test_request_hash_ignores_key_order():
    a = {"model": "m", "messages": [{"role": "user", "content": "x"}], "temperature": 0}
    b = {"temperature": 0, "messages": [{"content": "x", "role": "user"}], "model": "m"}
    assert llm_client.request_sha256(a) == llm_client.request_sha256(b)
    assert llm_client.request_sha256(a) != llm_client.request_sha256({**a, "model": "n"})


def test_extract_content_fallbacks():
    assert llm_client.extract_content({"choices": [{"message": {"content": "hi"}}]}) == "hi"
    assert llm_client.extract_content({"choices": [{"text": "yo"}]}) == "yo"
    assert llm_client.extract_content({"output_text": "ok"}) == "ok"
    assert llm_client.extract_content({}) is None


def test_live_records_then_replay_reads(tmp_path):
    path = tmp_path / "cassette.jsonl"
    live = ChatEndpoint(mode="live", cassette=Cassette(path), transport=lambda p: "A ship.")
    first = live.complete("prompt")
    assert (first.text, first.attempts, first.cached) == ("A ship.", 1, False)

    line = json.loads(path.read_text(encoding="utf-8").strip())
    assert set(line) == {"request_sha256", "response_text"}

    replay = ChatEndpoint(mode="replay", cassette=Cassette(path))
    again = replay.complete("prompt")
    assert (again.text, again.attempts, again.cached) == ("A ship.", 0, True)
    with pytest.raises(CassetteMiss):
        replay.complete("another prompt")


def test_empty_completion_not_recorded(tmp_path):
    cassette = Cassette(tmp_path / "c.jsonl")
    ChatEndpoint(mode="live", cassette=cassette, transport=lambda p: "").complete("x")
    assert len(cassette) == 0


def test_retries_with_exponential_backoff():
    sleeps = []
    calls = {"n": 0}

    def flaky(payload):
        calls["n"] += 1
        if calls["n"] < 3:
            raise ConnectionError("boom")
        return "ok"

    ep = ChatEndpoint(mode="live", transport=flaky, retries=3, backoff_base=0.5, sleep=sleeps.append)
    out = ep.complete("x")
    assert (out.text, out.attempts) == ("ok", 3)
    assert sleeps == [0.5, 1.0]


def test_exhausted_retries_raise_with_attempts():
    ep = ChatEndpoint(mode="live", transport=lambda p: (_ for _ in ()).throw(TimeoutError()), retries=2,
                      sleep=lambda s: None)
    with pytest.raises(EndpointError) as exc:
        ep.complete("x")
    assert exc.value.attempts == 2


def test_concurrency_is_bounded():
    active = {"now": 0, "peak": 0}
    lock = threading.Lock()
    gate = threading.Event()

    def slow(payload):
        with lock:
            active["now"] += 1
            active["peak"] = max(active["peak"], active["now"])
        gate.wait(0.05)
        with lock:
            active["now"] -= 1
        return payload["messages"][0]["content"]

    ep = ChatEndpoint(mode="live", transport=slow, max_concurrency=2)
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(ep.complete, [f"p{i}" for i in range(16)]))
    assert [r.text for r in results] == [f"p{i}" for i in range(16)]
    assert active["peak"] <= 2


def test_token_bucket_waits_for_refill():
    now = {"t": 0.0}
    sleeps = []

    def sleep(s):
        sleeps.append(s)
        now["t"] += s

    bucket = TokenBucket(rate=2.0, capacity=1.0, clock=lambda: now["t"], sleep=sleep)
    bucket.acquire()
    bucket.acquire()
    assert sleeps == [pytest.approx(0.5)]


def test_unlimited_bucket_never_sleeps():
    bucket = TokenBucket(rate=0, sleep=lambda s: pytest.fail("slept"))
    for _ in range(100):
        bucket.acquire()


def test_invalid_mode():
    with pytest.raises(ValueError):
        ChatEndpoint(mode="offline")


def test_status_without_key_reports_missing(monkeypatch):
    monkeypatch.delenv(llm_client.API_KEY_ENV, raising=False)
    assert llm_client.llm_status()["ok"] is False
    assert llm_client.chat_probe()["ok"] is False


def test_malformed_cassette_names_file(tmp_path):
    path = tmp_path / "cassette.jsonl"
    path.write_text('{"request_sha256": "abc"}\n', encoding="utf-8")
    with pytest.raises(MalformedDocument) as exc:
        Cassette(path)
    assert str(path) in str(exc.value)


def test_env_file_fills_unset_variables(tmp_path, monkeypatch):
    pytest.importorskip("dotenv")
    (tmp_path / ".env").write_text(
        f"{llm_client.API_KEY_ENV}=from-file\nSAR_NARRATOR_MODEL=file-model\n", encoding="utf-8"
    )
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SAR_NARRATOR_MODEL", "shell-model")
    assert Path(llm_client.load_env_file()).resolve() == (tmp_path / ".env").resolve()
    assert llm_client.os.environ[llm_client.API_KEY_ENV] == "from-file"
    assert llm_client.os.environ["SAR_NARRATOR_MODEL"] == "shell-model"
