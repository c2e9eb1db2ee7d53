from __future__ import annotations

import json

import pytest

from hopbench.corpus import Chunk, Sentence, SentenceStore
from hopbench.errors import ExtractionError
from hopbench.extract import NodeExtraction, extract_triplets, parse_json_array
from hopbench.providers import ChatService, EmbeddingVector, MockChatTransport


def embedding() -> EmbeddingVector:
    return EmbeddingVector(values=(1.0, 0.0), dimension=2, source_text_hash="h")


def fixture_corpus():
    sentences = [
        Sentence("d1", 1, 0, "Diabetes accumulation of AGEs."),
        Sentence("d1", 1, 1, "Unrelated filler sentence."),
    ]
    chunk = Chunk(
        chunk_id="c1",
        doc_id="d1",
        sentence_span=(0, 1),
        text="Diabetes accumulation of AGEs. Unrelated filler sentence.",
        page_anchor=1,
        embedding=embedding(),
    )
    return [chunk], SentenceStore(sentences)


def scripted_chat(payload) -> ChatService:
    response = json.dumps(payload)
    return ChatService(MockChatTransport(scripted=[("Passages:", response)]))


def test_fixture_triplet_with_valid_span_accepted():
    chunks, store = fixture_corpus()
    chat = scripted_chat(
        [{"head": "Diabetes", "relation": "accumulation of", "tail": "AGEs", "chunk_id": "c1", "sentence_index": 0}]
    )
    accepted = extract_triplets("n1", chunks, chat, store)
    assert len(accepted) == 1
    assert accepted[0].head_surface == "Diabetes"
    assert accepted[0].tail_surface == "AGEs"
    assert accepted[0].evidence.chunk_id == "c1"
    assert accepted[0].evidence.sentence_span == (0, 0)
    assert accepted[0].source_node_id == "n1"


def test_triplet_absent_from_cited_sentence_rejected():
    chunks, store = fixture_corpus()
    chat = scripted_chat(
        [{"head": "Diabetes", "relation": "causes", "tail": "Melanoma", "chunk_id": "c1", "sentence_index": 0}]
    )
    report = NodeExtraction(node_id="n1")
    accepted = extract_triplets("n1", chunks, chat, store, report=report)
    assert accepted == []
    assert report.rejected == 1
    assert report.rejection_reasons == {"surface_not_in_evidence": 1}


def test_sentence_index_outside_span_rejected():
    chunks, store = fixture_corpus()
    chat = scripted_chat(
        [{"head": "Diabetes", "relation": "causes", "tail": "AGEs", "chunk_id": "c1", "sentence_index": 7}]
    )
    report = NodeExtraction(node_id="n1")
    assert extract_triplets("n1", chunks, chat, store, report=report) == []
    assert report.rejection_reasons == {"sentence_out_of_span": 1}


def test_empty_node_returns_empty_without_calls():
    class ExplodingTransport(MockChatTransport):
        def complete(self, request):
            raise AssertionError("no call expected")

    _, store = fixture_corpus()
    assert extract_triplets("n1", [], ChatService(ExplodingTransport()), store) == []


def test_unparseable_output_errors_after_two_reasks():
    calls = []

    class GarbageTransport(MockChatTransport):
        def complete(self, request):
            calls.append(1)
            return "not json at all"

    chunks, store = fixture_corpus()
    with pytest.raises(ExtractionError):
        extract_triplets("n1", chunks, ChatService(GarbageTransport()), store)
    assert len(calls) == 3  # first ask plus two re-asks


def test_reask_recovers_once_json_appears():
    calls = []
    good = json.dumps(
        [{"head": "Diabetes", "relation": "accumulation of", "tail": "AGEs", "chunk_id": "c1", "sentence_index": 0}]
    )

    class FlakyTransport(MockChatTransport):
        def complete(self, request):
            calls.append(1)
            return "hmm let me think" if len(calls) == 1 else good

    chunks, store = fixture_corpus()
    accepted = extract_triplets("n1", chunks, ChatService(FlakyTransport()), store)
    assert len(accepted) == 1
    assert len(calls) == 2


def test_parse_json_array_lenient_extraction():
    assert parse_json_array('Sure! [{"a": 1}] done') == [{"a": 1}]
    assert parse_json_array("[1, 2, 3]") == [1, 2, 3]
    assert parse_json_array('{"not": "array"}') is None
    assert parse_json_array("nothing here") is None


def test_builtin_mock_extracts_relation_sentences():
    sentences = [
        Sentence("d1", 1, 0, "Type 2 diabetes causes AGEs accumulation."),
        Sentence("d1", 1, 1, "AGEs accumulation triggers osteoblast suppression."),
    ]
    chunk = Chunk(
        chunk_id="c9",
        doc_id="d1",
        sentence_span=(0, 1),
        text=" ".join(s.text for s in sentences),
        page_anchor=1,
        embedding=embedding(),
    )
    accepted = extract_triplets("n1", [chunk], ChatService(MockChatTransport()), SentenceStore(sentences))
    pairs = {(t.head_surface, t.tail_surface) for t in accepted}
    assert ("Type 2 diabetes", "AGEs accumulation") in pairs
    assert ("AGEs accumulation", "osteoblast suppression") in pairs
