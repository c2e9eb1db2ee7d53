from __future__ import annotations

import json

import pytest

from hopbench.adjudicate import adjudicate_quality
from hopbench.errors import AdjudicationError, ValidationError
from hopbench.providers import ChatService, MockChatTransport
from hopbench.synthesis import QAItem


def item() -> QAItem:
    return QAItem(
        qa_id="qa7",
        language="EN",
        difficulty="hard",
        clinical_task="unadjudicated",
        question="Which downstream finding is most expected?",
        options=["w", "x", "y", "z"],
        answer_index=0,
        hard_negative_index=1,
        masked_entity={"canonical": "m", "aliases": []},
        rationale="because of the hidden step",
        evidence_anchors=[],
        chain_ref="a>b>c",
    )


def scripted_member(payload: str) -> ChatService:
    return ChatService(MockChatTransport(scripted=[("adjudicator", payload)]))


def verdict(task: str, clarity: int, validity: int = 5, difficulty: int = 3) -> str:
    return json.dumps(
        {
            "clinical_task": task,
            "reasoning_type": "Multi-hop",
            "clarity_score": clarity,
            "validity_score": validity,
            "difficulty_score": difficulty,
        }
    )


def test_scores_are_arithmetic_means_two_decimals():
    ensemble = [
        scripted_member(verdict("Clinical Diagnosis", 5)),
        scripted_member(verdict("Clinical Diagnosis", 4)),
        scripted_member(verdict("Clinical Diagnosis", 5)),
    ]
    result = adjudicate_quality(item(), ensemble)
    assert result.clarity == 4.67  # mean of {5, 4, 5}
    assert result.validity == 5.0
    assert result.members_responded == 3


def test_prose_wrapped_json_accepted():
    wrapped = f"Sure, here you go: {verdict('Basic Medicine', 4)} hope that helps"
    result = adjudicate_quality(item(), [scripted_member(wrapped)])
    assert result.clinical_task == "Basic Medicine"
    assert result.clarity == 4.0


def test_majority_vote_with_first_provider_tie_break():
    ensemble = [
        scripted_member(verdict("Clinical Treatment", 4)),
        scripted_member(verdict("Basic Medicine", 4)),
        scripted_member(verdict("Basic Medicine", 4)),
    ]
    assert adjudicate_quality(item(), ensemble).clinical_task == "Basic Medicine"

    tied = [
        scripted_member(verdict("Clinical Treatment", 4)),
        scripted_member(verdict("Basic Medicine", 4)),
    ]
    assert adjudicate_quality(item(), tied).clinical_task == "Clinical Treatment"


def test_all_members_unparseable_is_adjudication_error():
    garbage = [scripted_member("not json"), scripted_member("also not json")]
    with pytest.raises(AdjudicationError):
        adjudicate_quality(item(), garbage)


def test_failed_members_are_skipped_not_fatal():
    ensemble = [scripted_member("garbage"), scripted_member(verdict("Clinical Diagnosis", 5))]
    result = adjudicate_quality(item(), ensemble)
    assert result.members_responded == 1
    assert result.clarity == 5.0


def test_empty_ensemble_rejected():
    with pytest.raises(ValidationError):
        adjudicate_quality(item(), [])


def test_builtin_mock_judges_return_valid_schema():
    ensemble = [ChatService(MockChatTransport(seed=s)) for s in (1, 2, 3)]
    result = adjudicate_quality(item(), ensemble)
    assert 1 <= result.clarity <= 5
    assert 1 <= result.validity <= 5
    assert 1 <= result.difficulty <= 5
    assert result.members_responded == 3
