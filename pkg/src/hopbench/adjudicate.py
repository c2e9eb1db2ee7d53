"""Ensemble quality adjudication of synthesized items.

Each ensemble member receives the fixed adjudication prompt and must return
strict JSON (one re-ask, then lenient brace extraction). Numeric scores are
the arithmetic mean over responding members; the task label is a majority
vote with ties broken by provider order."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import prompts
from .errors import AdjudicationError, ProviderError, ValidationError
from .providers import ChatRequest, ChatService
from .synthesis import QAItem, parse_json_object

logger = logging.getLogger(__name__)

SCORE_FIELDS = ("clarity_score", "validity_score", "difficulty_score")


@dataclass
class Adjudication:
    qa_id: str
    clinical_task: str
    reasoning_type: str
    clarity: float
    validity: float
    difficulty: float
    members_responded: int

    def to_record(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "clinical_task": self.clinical_task,
            "reasoning_type": self.reasoning_type,
            "clarity": self.clarity,
            "validity": self.validity,
            "difficulty": self.difficulty,
            "members_responded": self.members_responded,
        }


def _ask_member(service: ChatService, prompt: str, model_name: str) -> dict | None:
    request = ChatRequest.user(prompt, temperature=0.0, model_name=model_name)
    for _ in range(2):  # one re-ask on parse failure
        try:
            response = service.complete(request)
        except ProviderError as exc:
            logger.warning("adjudication member failed: %s", exc)
            return None
        payload = parse_json_object(response)
        if payload is not None and all(f in payload for f in SCORE_FIELDS):
            return payload
        request = request.with_reask("Output EXACTLY the JSON format requested, nothing else.")
    return None


def _majority_label(labels: list[str]) -> str:
    counts: dict[str, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    best_count = max(counts.values())
    for label in labels:  # provider order breaks ties
        if counts[label] == best_count:
            return label
    raise AssertionError("unreachable")


def adjudicate_quality(
    item: QAItem,
    ensemble: list[ChatService],
    model_names: list[str] | None = None,
) -> Adjudication:
    """Score one item with the ensemble; raises when every member fails."""
    if not ensemble:
        raise ValidationError("adjudication ensemble must be non-empty")
    names = model_names or ["default"] * len(ensemble)
    if len(names) != len(ensemble):
        raise ValidationError("model_names must align with the ensemble")

    prompt = prompts.render_adjudication_prompt(
        item.question, item.options, item.answer_index, item.rationale
    )
    verdicts: list[dict] = []
    for service, name in zip(ensemble, names):
        payload = _ask_member(service, prompt, name)
        if payload is not None:
            verdicts.append(payload)
    if not verdicts:
        raise AdjudicationError(f"{item.qa_id}: no ensemble member returned parseable JSON")

    def mean_score(field: str) -> float:
        values = []
        for verdict in verdicts:
            try:
                values.append(float(verdict[field]))
            except (TypeError, ValueError):
                continue
        if not values:
            raise AdjudicationError(f"{item.qa_id}: no numeric {field} in any verdict")
        return round(sum(values) / len(values), 2)

    return Adjudication(
        qa_id=item.qa_id,
        clinical_task=_majority_label([str(v.get("clinical_task", "Unlabeled")) for v in verdicts]),
        reasoning_type=_majority_label([str(v.get("reasoning_type", "Multi-hop")) for v in verdicts]),
        clarity=mean_score("clarity_score"),
        validity=mean_score("validity_score"),
        difficulty=mean_score("difficulty_score"),
        members_responded=len(verdicts),
    )
