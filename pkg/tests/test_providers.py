from __future__ import annotations

import numpy as np
import pytest

from hopbench.errors import ProtocolError, TransportError, ValidationError
from hopbench.providers import (
    ChatMessage,
    ChatRequest,
    ChatService,
    EmbeddingService,
    HttpChatTransport,
    MockChatTransport,
    MockEmbeddingTransport,
    ResponseCache,
    chat_request_hash,
    parallel_map,
)


def test_chat_request_rejects_empty_messages():
    with pytest.raises(ValidationError):
        ChatRequest(messages=())


def test_chat_request_rejects_blank_role():
    with pytest.raises(ValidationError):
        ChatRequest(messages=(ChatMessage("", "hi"),))


def test_request_hash_stable_and_sensitive():
    a = ChatRequest.user("hello", model_name="m1", temperature=0.0)
    b = ChatRequest.user("hello", model_name="m1", temperature=0.0)
    c = ChatRequest.user("hello", model_name="m2", temperature=0.0)
    d = ChatRequest.user("hello", model_name="m1", temperature=0.5)
    assert chat_request_hash(a) == chat_request_hash(b)
    assert chat_request_hash(a) != chat_request_hash(c)  # model in the key
    assert chat_request_hash(a) != chat_request_hash(d)  # temperature too


def test_cache_round_trip_byte_identical(tmp_path):
    service = ChatService(MockChatTransport(seed=1), cache=ResponseCache(tmp_path))
    request = ChatRequest.user("anything at all")
    first = service.complete(request, cache_policy="use")
    second = service.complete(request, cache_policy="use")
    assert first == second
    assert first.encode("utf-8") == second.encode("utf-8")


def test_cache_hit_skips_transport(tmp_path):
    class CountingTransport(MockChatTransport):
        calls = 0

        def complete(self, request):
            type(self).calls += 1
            return super().complete(request)

    service = ChatService(CountingTransport(seed=1), cache=ResponseCache(tmp_path))
    request = ChatRequest.user("count me")
    service.complete(request)
    service.complete(request)
    assert CountingTransport.calls == 1
    service.complete(request, cache_policy="bypass")
    assert CountingTransport.calls == 2


def test_mock_response_keyed_by_request_hash():
    transport = MockChatTransport(seed=3)
    request = ChatRequest.user("free-form request with no sentinel")
    first = transport.complete(request)
    second = transport.complete(request)
    assert first == second
    assert first.startswith("mock-response:")
    assert chat_request_hash(request)[:16] in first


def test_mock_embeddings_pure_function_of_text_and_seed():
    a = MockEmbeddingTransport(dimension=16, seed=5)
    b = MockEmbeddingTransport(dimension=16, seed=5)
    other_seed = MockEmbeddingTransport(dimension=16, seed=6)
    assert a.embed(["osteoblast activity"]) == b.embed(["osteoblast activity"])
    assert a.embed(["osteoblast activity"]) != other_seed.embed(["osteoblast activity"])


def test_mock_embeddings_unit_norm_and_vocab_similarity():
    transport = MockEmbeddingTransport(dimension=32, seed=0)
    rows = transport.embed(
        ["diabetes harms bone", "diabetes harms nerves", "thrombus embolism stroke"]
    )
    for row in rows:
        assert np.isclose(np.linalg.norm(row), 1.0)
    same_topic = float(np.dot(rows[0], rows[1]))
    cross_topic = float(np.dot(rows[0], rows[2]))
    assert same_topic > cross_topic  # shared tokens pull vectors together


def test_embed_texts_identical_inputs_identical_vectors():
    service = EmbeddingService(MockEmbeddingTransport(dimension=16, seed=2))
    vectors = service.embed_texts(["a", "a"])
    assert vectors[0].values == vectors[1].values
    assert vectors[0].dimension == 16


def test_embed_texts_batch_matches_single_calls():
    service = EmbeddingService(MockEmbeddingTransport(dimension=16, seed=2))
    texts = ["first text", "second text", "third text"]
    batch = service.embed_texts(texts)
    singles = [service.embed_texts([t])[0] for t in texts]
    assert [v.values for v in batch] == [v.values for v in singles]
    assert [v.source_text_hash for v in batch] == [v.source_text_hash for v in singles]


def test_embed_texts_validation_errors():
    service = EmbeddingService(MockEmbeddingTransport(dimension=16, seed=2))
    with pytest.raises(ValidationError):
        service.embed_texts([])
    with pytest.raises(ValidationError):
        service.embed_texts(["fine", "   "])


def test_http_chat_retries_then_raises_transport_error(monkeypatch):
    import requests

    attempts = []

    def failing_post(url, json=None, headers=None, timeout=None):
        attempts.append(url)
        raise requests.ConnectionError("refused")

    monkeypatch.setattr(requests, "post", failing_post)
    sleeps: list[float] = []
    transport = HttpChatTransport("http://localhost:9", sleep=sleeps.append)
    with pytest.raises(TransportError):
        transport.complete(ChatRequest.user("hi"))
    assert len(attempts) == 3
    assert sleeps == [1.0, 2.0]  # exponential backoff from 1s


def test_http_chat_rate_limit_retries_then_succeeds(monkeypatch):
    import requests

    responses = []

    class FakeResponse:
        def __init__(self, status_code, payload=None, text=""):
            self.status_code = status_code
            self._payload = payload
            self.text = text

        def json(self):
            return self._payload

    def post(url, json=None, headers=None, timeout=None):
        responses.append(url)
        if len(responses) < 2:
            return FakeResponse(429)
        return FakeResponse(200, {"choices": [{"message": {"content": "pong"}}]})

    monkeypatch.setattr(requests, "post", post)
    transport = HttpChatTransport("http://localhost:9", sleep=lambda _: None)
    assert transport.complete(ChatRequest.user("ping")) == "pong"


def test_http_chat_malformed_json_is_protocol_error(monkeypatch):
    import requests

    class FakeResponse:
        status_code = 200
        text = "ok"

        def json(self):
            return {"unexpected": "shape"}

    monkeypatch.setattr(requests, "post", lambda *a, **k: FakeResponse())
    transport = HttpChatTransport("http://localhost:9", sleep=lambda _: None)
    with pytest.raises(ProtocolError):
        transport.complete(ChatRequest.user("hi"))


def test_parallel_map_preserves_order():
    items = list(range(20))
    assert parallel_map(lambda x: x * x, items, max_workers=4) == [x * x for x in items]
