"""Sentence segmentation and ``[n]`` citation-marker extraction.

Segmentation is rule-based so results are reproducible: a sentence ends at
``.``/``!``/``?`` followed by whitespace or end of text, at the newline that
ends a bullet line, and at blank lines. Citation markers written right after
the terminal punctuation (``Great grip. [2]``) stay with that sentence.
Spans are character offsets into the raw text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from groundcheck.model import EvidenceSet, RawResponse, Variant

MARKER_RE = re.compile(r"\[[ \t]*(-?\d+(?:[ \t]*,[ \t]*-?\d+)*)[ \t]*\]")
_BOUNDARY_RE = re.compile(r"(?P<punct>[.!?]+)[\"'”’)]*(?=\s|$)")
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")
_SPACE_RE = re.compile(r"\s+")
_SPACE_BEFORE_PUNCT_RE = re.compile(r"\s+([.,!?;:])")

ABBREVIATIONS = frozenset(
    {
        "e.g", "i.e", "etc", "vs", "cf", "approx", "dr", "mr", "mrs", "ms", "prof",
        "inc", "ltd", "co", "corp", "jr", "sr", "st", "no", "fig", "u.s",
    }
)


@dataclass(frozen=True)
class CitationRef:
    raw_index: int
    valid: bool


@dataclass(frozen=True)
class Sentence:
    text: str
    span: tuple[int, int]
    citations: tuple[CitationRef, ...] = ()

    @property
    def cited_indices(self) -> tuple[int, ...]:
        return tuple(ref.raw_index for ref in self.citations)


@dataclass(frozen=True)
class ParsedResponse:
    sentences: tuple[Sentence, ...]
    variant: Variant = Variant.CITATION
    invalid_citation_count: int = 0

    @property
    def has_citations(self) -> bool:
        return any(s.citations for s in self.sentences)


def _marker_mask(text: str) -> tuple[str, list[int]]:
    """Remove markers until none are left.

    Returns the stripped text and, for each of its characters, the offset it
    came from. Repeating the pass means ``[1[2]3]`` is fully removed and
    stripping is idempotent.
    """
    kept = list(range(len(text)))
    current = text
    while True:
        spans = [m.span() for m in MARKER_RE.finditer(current)]
        if not spans:
            return current, kept
        drop = set()
        for a, b in spans:
            drop.update(range(a, b))
        kept = [k for i, k in enumerate(kept) if i not in drop]
        current = "".join(text[k] for k in kept)


def strip_markers(text: str) -> str:
    """Delete citation markers without touching anything else."""
    return _marker_mask(text)[0]


def _guarded(text: str, dot: int) -> bool:
    """True when the period at ``dot`` belongs to an abbreviation or a list ordinal."""
    start = dot
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    token = text[start:dot].lower()
    if token in ABBREVIATIONS:
        return True
    if token.isdigit():
        line_start = text.rfind("\n", 0, start) + 1
        return not text[line_start:start].strip()
    return False


def _cuts(text: str) -> set[int]:
    """Sentence end offsets in marker-free ``text``."""
    cuts = set()
    pos = 0
    lines = text.split("\n")
    for i, line in enumerate(lines):
        end = pos + len(line)
        if i < len(lines) - 1:
            nxt = lines[i + 1]
            if _BULLET_RE.match(line) or not line.strip() or not nxt.strip() or _BULLET_RE.match(nxt):
                cuts.add(end)
        pos = end + 1
    for m in _BOUNDARY_RE.finditer(text):
        if m.group("punct") == "." and _guarded(text, m.start("punct")):
            continue
        cuts.add(m.end())
    cuts.add(len(text))
    return cuts


def segment_sentences(text: str) -> list[tuple[str, tuple[int, int]]]:
    """Split ``text`` into ``(sentence, (start, end))`` pairs.

    Boundaries are found on the marker-free text and mapped back, so markers
    never change where a sentence ends.
    """
    if not text:
        return []
    stripped, kept = _marker_mask(text)
    is_marker = [True] * len(text)
    for k in kept:
        is_marker[k] = False

    cuts = set()
    for c in _cuts(stripped):
        p = kept[c - 1] + 1 if c else 0
        # markers right after the end (optionally after spaces) belong to this sentence
        while True:
            q = p
            while q < len(text) and text[q] in " \t":
                q += 1
            if q < len(text) and is_marker[q]:
                while q < len(text) and is_marker[q]:
                    q += 1
                p = q
            else:
                break
        cuts.add(p)
    cuts.add(len(text))

    pieces = []
    prev = 0
    for cut in sorted(cuts):
        chunk = text[prev:cut]
        lead = len(chunk) - len(chunk.lstrip())
        trail = len(chunk.rstrip())
        if chunk.strip():
            pieces.append((prev + lead, prev + trail))
        prev = cut

    # marker-only fragments join their neighbour so markers never form a sentence
    merged: list[list[int]] = []
    pending_start = None
    for start, end in pieces:
        if all(is_marker[i] or text[i].isspace() for i in range(start, end)):
            if merged:
                merged[-1][1] = end
            elif pending_start is None:
                pending_start = start
            continue
        if pending_start is not None:
            start, pending_start = pending_start, None
        merged.append([start, end])
    return [(text[s:e], (s, e)) for s, e in merged]


def clean_text(text: str) -> str:
    out = _SPACE_RE.sub(" ", strip_markers(text)).strip()
    return _SPACE_BEFORE_PUNCT_RE.sub(r"\1", out)


def parse_citations(sentence_text: str, evidence_count: int) -> tuple[str, list[CitationRef]]:
    """Pull ``[n]``, ``[1][3]`` and ``[1, 3]`` markers out of one sentence.

    Indices outside ``1..evidence_count`` are kept but flagged invalid.
    Non-numeric brackets such as ``[a]`` are left in the text.
    """
    if evidence_count < 0:
        raise ValueError("evidence_count must be >= 0")
    refs: list[CitationRef] = []
    seen = set()
    current = sentence_text
    while True:
        found = list(MARKER_RE.finditer(current))
        if not found:
            break
        for m in found:
            for part in m.group(1).split(","):
                idx = int(part)
                if idx in seen:
                    continue
                seen.add(idx)
                refs.append(CitationRef(idx, 1 <= idx <= evidence_count))
        current = MARKER_RE.sub("", current)
    return clean_text(sentence_text), refs


def parse_response(raw: RawResponse, evidence_set: EvidenceSet) -> ParsedResponse:
    n_evidence = len(evidence_set)
    sentences = []
    invalid = 0
    for text, span in segment_sentences(raw.text):
        clean, refs = parse_citations(text, n_evidence)
        invalid += sum(1 for r in refs if not r.valid)
        sentences.append(Sentence(clean, span, tuple(refs)))
    return ParsedResponse(tuple(sentences), raw.variant, invalid)
