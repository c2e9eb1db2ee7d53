"""Entity mention alignment: greedy longest-match scanning, edit distance,
and length-scaled fuzzy merging of surface variants onto known entities."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping

from .corpus import normalize_for_match
from .errors import ValidationError

logger = logging.getLogger(__name__)

_WORD_TOKEN = re.compile(r"[A-Za-z0-9][A-Za-z0-9'\-]*|[一-鿿]")
_CHAR_TOKEN = re.compile(r"\S")


@dataclass(frozen=True)
class ThetaSchedule:
    """Edit-distance tolerance as a non-decreasing step function of length."""

    steps: tuple[tuple[int, int], ...] = ((3, 0), (7, 1), (12, 2))
    above: int = 3

    def __post_init__(self):
        last_limit = 0
        last_tol = -1
        for limit, tolerance in self.steps:
            if limit <= last_limit:
                raise ValidationError("theta schedule limits must strictly increase")
            if tolerance < last_tol:
                raise ValidationError("theta schedule tolerances must be non-decreasing")
            last_limit, last_tol = limit, tolerance
        if self.above < last_tol:
            raise ValidationError("theta above-tolerance must not decrease")

    def theta(self, length: int) -> int:
        for limit, tolerance in self.steps:
            if length <= limit:
                return tolerance
        return self.above


DEFAULT_THETA = ThetaSchedule()


def damerau_levenshtein(s1: str, s2: str) -> int:
    """Optimal string alignment distance: unit-cost insert, delete,
    substitute, and adjacent transposition (no re-edit after a swap)."""
    m, n = len(s1), len(s2)
    if m == 0:
        return n
    if n == 0:
        return m
    previous2 = [0] * (n + 1)
    previous = list(range(n + 1))
    for i in range(1, m + 1):
        current = [i] + [0] * n
        for j in range(1, n + 1):
            cost = 0 if s1[i - 1] == s2[j - 1] else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
            if i > 1 and j > 1 and s1[i - 1] == s2[j - 2] and s1[i - 2] == s2[j - 1]:
                current[j] = min(current[j], previous2[j - 2] + 1)
        previous2, previous = previous, current
    return previous[n]


def _tokenize_with_spans(text: str, mode: str) -> list[tuple[int, int]]:
    pattern = _CHAR_TOKEN if mode == "char" else _WORD_TOKEN
    return [(m.start(), m.end()) for m in pattern.finditer(text)]


def _phrase_key(text: str, spans: list[tuple[int, int]], mode: str) -> str:
    joiner = "" if mode == "char" else " "
    return normalize_for_match(joiner.join(text[a:b] for a, b in spans))


def align_maxmatch(
    text: str,
    vocabulary: Mapping[str, str] | set[str],
    mode: str = "word",
) -> list[tuple[str, str, tuple[int, int]]]:
    """Greedy left-to-right longest-match scan of ``text`` against vocabulary.

    ``vocabulary`` maps surface forms (canonical names and aliases) to entity
    ids; a plain set maps each surface to itself. Matches never overlap;
    unmatched tokens are skipped. ``mode`` is "word" for space-delimited text
    and "char" for CJK-style text.
    """
    if mode not in ("word", "char"):
        raise ValidationError(f"unknown maxmatch mode: {mode!r}")
    if isinstance(vocabulary, set):
        vocabulary = {surface: surface for surface in vocabulary}
    normalized_vocab: dict[str, str] = {}
    max_tokens = 1
    for surface, entity_id in vocabulary.items():
        token_spans = _tokenize_with_spans(surface, mode)
        if not token_spans:
            continue
        key = _phrase_key(surface, token_spans, mode)
        normalized_vocab.setdefault(key, entity_id)
        max_tokens = max(max_tokens, len(token_spans))

    if not normalized_vocab:
        return []

    spans = _tokenize_with_spans(text, mode)
    matches: list[tuple[str, str, tuple[int, int]]] = []
    i = 0
    while i < len(spans):
        matched = False
        for width in range(min(max_tokens, len(spans) - i), 0, -1):
            window = spans[i : i + width]
            key = _phrase_key(text, window, mode)
            entity_id = normalized_vocab.get(key)
            if entity_id is not None:
                start, end = window[0][0], window[-1][1]
                matches.append((text[start:end], entity_id, (start, end)))
                i += width
                matched = True
                break
        if not matched:
            i += 1
    return matches


def fuzzy_merge(
    candidate: str,
    vocabulary: Mapping[str, str],
    theta_schedule: ThetaSchedule = DEFAULT_THETA,
    frequencies: Mapping[str, int] | None = None,
    canonical_names: Mapping[str, str] | None = None,
) -> str | None:
    """Map a candidate surface onto the closest known entity within tolerance.

    Tolerance scales with the candidate's length per the schedule. Ties break
    by smaller distance, then higher entity frequency, then lexicographic
    canonical name. Returns None when nothing qualifies.
    """
    normalized = normalize_for_match(candidate)
    if not normalized:
        return None
    tolerance = theta_schedule.theta(len(normalized))
    best: tuple[int, int, str, str] | None = None
    for surface, entity_id in vocabulary.items():
        target = normalize_for_match(surface)
        if abs(len(target) - len(normalized)) > tolerance:
            continue
        distance = damerau_levenshtein(normalized, target)
        if distance > tolerance:
            continue
        frequency = (frequencies or {}).get(entity_id, 0)
        name = (canonical_names or {}).get(entity_id, entity_id)
        key = (distance, -frequency, name, entity_id)
        if best is None or key < best:
            best = key
    return best[3] if best else None


def osa_triangle_violations(samples: list[str]) -> list[tuple[str, str, str]]:
    """Count triangle-inequality violations of the alignment distance.

    The adjacent-transposition variant is not a true metric on adversarial
    strings; violations are logged rather than repaired.
    """
    violations = []
    for a in samples:
        for b in samples:
            for c in samples:
                if damerau_levenshtein(a, c) > damerau_levenshtein(a, b) + damerau_levenshtein(b, c):
                    violations.append((a, b, c))
    if violations:
        logger.warning("alignment distance triangle violations: %d", len(violations))
    return violations
