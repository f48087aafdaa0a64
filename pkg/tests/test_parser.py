from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundcheck.model import EvidenceSet, RawResponse
from groundcheck.parser import (
    CitationRef,
    parse_citations,
    parse_response,
    segment_sentences,
    strip_markers,
)
from textgen import injected_text


def _evidence(n):
    return EvidenceSet.from_texts([f"evidence {i}" for i in range(1, n + 1)])


def test_empty_text_has_no_sentences():
    assert segment_sentences("") == []
    assert parse_response(RawResponse(""), _evidence(2)).sentences == ()


def test_two_plain_sentences():
    assert [s for s, _ in segment_sentences("Fits well. Runs small.")] == ["Fits well.", "Runs small."]


def test_decimal_point_is_not_a_boundary():
    out = segment_sentences("Sizes range from 8.5 to 11. Great grip!")
    assert [s for s, _ in out] == ["Sizes range from 8.5 to 11.", "Great grip!"]


@pytest.mark.parametrize("text, expected", [
    ("Great for hiking, e.g. steep trails. Light too.", 2),
    ("Dr. Martens fit well. Nice.", 2),
    ("Fits well [1]. Runs small [2].", 2),
    ("Fits well. [1] Runs small.", 2),
    ("Pros:\n- light\n- warm\nCons: pricey.", 4),
    ("1. Fits well\n2. Runs small", 2),
    ("First para\n\nSecond para", 2),
    ("He said \"wow.\" Then left.", 2),
    ("Great value!!! Would buy again?", 2),
    ("Price is about 3. Not bad.", 2),
])
def test_boundary_rules(text, expected):
    assert len(segment_sentences(text)) == expected


def test_spans_point_back_into_the_text():
    text = "  Fits well [1].\nRuns small. "
    for sentence, (start, end) in segment_sentences(text):
        assert text[start:end] == sentence


def test_marker_after_period_attaches_to_preceding_sentence():
    parsed = parse_response(RawResponse("Fits well. [1] Runs small."), _evidence(2))
    assert [s.cited_indices for s in parsed.sentences] == [(1,), ()]


def test_adjacent_markers():
    assert parse_citations("Great grip [1][3].", 5) == ("Great grip.", [CitationRef(1, True), CitationRef(3, True)])


def test_out_of_range_marker_is_kept_as_invalid():
    assert parse_citations("Fits small [7].", 5) == ("Fits small.", [CitationRef(7, False)])


def test_text_without_markers():
    assert parse_citations("No citations here.", 5) == ("No citations here.", [])


def test_comma_list_and_duplicates():
    clean, refs = parse_citations("Warm [2, 1,2] and light [1].", 3)
    assert clean == "Warm and light."
    assert [r.raw_index for r in refs] == [2, 1]


def test_zero_and_negative_indices_are_invalid():
    _, refs = parse_citations("Odd [0][-1].", 3)
    assert refs == [CitationRef(0, False), CitationRef(-1, False)]


def test_non_numeric_brackets_stay_in_text():
    clean, refs = parse_citations("Size [a] fits.", 3)
    assert refs == [] and clean == "Size [a] fits."


def test_negative_evidence_count_is_rejected():
    with pytest.raises(ValueError):
        parse_citations("x", -1)


def test_response_with_one_cited_sentence():
    parsed = parse_response(RawResponse("A [1]. B."), _evidence(2))
    assert len(parsed.sentences) == 2
    assert parsed.sentences[0].cited_indices == (1,)
    assert parsed.sentences[1].cited_indices == ()
    assert parsed.invalid_citation_count == 0


def test_invalid_citation_count():
    parsed = parse_response(RawResponse("A [1,9]."), _evidence(3))
    assert parsed.invalid_citation_count == 1
    assert parsed.sentences[0].citations == (CitationRef(1, True), CitationRef(9, False))


def test_every_citation_is_valid_or_flagged():
    parsed = parse_response(RawResponse("A [1][2][3][4]."), _evidence(2))
    assert [(r.raw_index, r.valid) for r in parsed.sentences[0].citations] == [
        (1, True), (2, True), (3, False), (4, False)]


def check_invariants(text: str, n_evidence: int = 5) -> None:
    raw = RawResponse(text)
    parsed = parse_response(raw, _evidence(n_evidence))
    # re-segmenting the stripped text gives the same sentence count
    assert len(parsed.sentences) == len(segment_sentences(strip_markers(text))), text
    # cited indices unique per sentence
    for s in parsed.sentences:
        assert len(set(s.cited_indices)) == len(s.cited_indices), text
    # purity
    assert parse_response(raw, _evidence(n_evidence)) == parsed
    # spans ordered, non-overlapping, covering all non-marker, non-space text
    prev_end = 0
    covered = []
    for s in parsed.sentences:
        start, end = s.span
        assert prev_end <= start < end <= len(text), text
        covered.append((start, end))
        prev_end = end
    outside = "".join(ch for i, ch in enumerate(text) if not any(a <= i < b for a, b in covered))
    assert not strip_markers(outside).strip(), (text, outside)


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_invariants_on_generated_strings(seed):
    check_invariants(injected_text(random.Random(seed)))


_alphabet = st.sampled_from(list("ab .!?\n-[]1,2\"") + ["e.g.", "[3]", "[1, 2]", "8.5"])


@settings(max_examples=300, deadline=None)
@given(st.lists(_alphabet, max_size=40).map("".join))
def test_invariants_on_arbitrary_strings(text):
    check_invariants(text)
