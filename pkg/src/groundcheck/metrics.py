"""Grounding and attribution metrics for a single response and for a corpus.

CGR  claim grounding rate       m_ground / m
CCR  correct citation rate      r_entail / r
PSR  perfect sentence rate      n_pcited / n_cited
SCR  sentence-with-citation     n_cited / n
EUR  evidence utilization       (k/|E|) * (1 - (|E| - k)/|E|^2)

A rate whose denominator is zero is ``None``; it is never coerced to 0 or 1.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from groundcheck.errors import ValidationError
from groundcheck.judge import Backend, Claim, Judge, as_judge, decompose_claims, detect_refusal
from groundcheck.model import (
    RATE_KEYS,
    BenchmarkRecord,
    EvidenceSet,
    MetricsReport,
    ResponseCounts,
    Variant,
    format_rate,
    ratio,
    utilization,
)
from groundcheck.parser import ParsedResponse, Sentence, parse_response

Rate = Fraction | None


def claim_grounding_rate(claims: Sequence[Claim], evidence_set: EvidenceSet,
                         judge: Judge | Backend | None = None) -> tuple[Rate, int, int]:
    """A claim is grounded when some evidence entails it (first hit wins, rank order)."""
    judge = as_judge(judge)
    grounded = 0
    for claim in claims:
        for ev in evidence_set:
            if judge.entails(ev.text, claim.text).entails:
                grounded += 1
                break
    return ratio(grounded, len(claims)), len(claims), grounded


def _citation_verdicts(sentence: Sentence, evidence_set: EvidenceSet, judge: Judge) -> list[bool]:
    # invalid indices are never correct; they still count towards r
    out = []
    for ref in sentence.citations:
        if not ref.valid or not sentence.text:
            out.append(False)
        else:
            out.append(judge.entails(evidence_set[ref.raw_index].text, sentence.text).entails)
    return out


def correct_citation_rate(parsed: ParsedResponse, evidence_set: EvidenceSet,
                          judge: Judge | Backend | None = None) -> tuple[Rate, int, int]:
    judge = as_judge(judge)
    r = r_entail = 0
    for sentence in parsed.sentences:
        verdicts = _citation_verdicts(sentence, evidence_set, judge)
        r += len(verdicts)
        r_entail += sum(verdicts)
    return ratio(r_entail, r), r, r_entail


def perfect_sentence_rate(parsed: ParsedResponse, evidence_set: EvidenceSet,
                          judge: Judge | Backend | None = None) -> tuple[Rate, int, int]:
    judge = as_judge(judge)
    n_cited = n_perfect = 0
    for sentence in parsed.sentences:
        if not sentence.citations:
            continue
        n_cited += 1
        if all(_citation_verdicts(sentence, evidence_set, judge)):
            n_perfect += 1
    return ratio(n_perfect, n_cited), n_cited, n_perfect


def sentence_citation_rate(parsed: ParsedResponse) -> tuple[Rate, int, int]:
    n = len(parsed.sentences)
    n_cited = sum(1 for s in parsed.sentences if s.citations)
    return ratio(n_cited, n), n, n_cited


def evidence_utilization_rate(parsed: ParsedResponse, evidence_set: EvidenceSet) -> tuple[Rate, int, int]:
    """``k`` is the number of distinct valid evidence indices cited anywhere."""
    cited = {ref.raw_index for s in parsed.sentences for ref in s.citations if ref.valid}
    return utilization(len(cited), len(evidence_set)), len(cited), len(evidence_set)


def evaluate_response(record: BenchmarkRecord, variant: Variant | str,
                      judge: Judge | Backend | None = None,
                      refusal_patterns: Iterable[str] | None = None) -> MetricsReport:
    """Parse, decompose and score one response of ``record``."""
    variant = Variant.parse(variant)
    raw = record.responses.get(variant)
    if raw is None:
        raise ValidationError(f"record {record.id!r} has no {variant.value} response")
    judge = as_judge(judge)
    evidence_set = record.evidence_set
    parsed = parse_response(raw, evidence_set)
    claims = decompose_claims(raw.text, judge)

    _, m, m_ground = claim_grounding_rate(claims, evidence_set, judge)
    _, r, r_entail = correct_citation_rate(parsed, evidence_set, judge)
    _, n_cited, n_pcited = perfect_sentence_rate(parsed, evidence_set, judge)
    _, n, _ = sentence_citation_rate(parsed)
    _, k, n_evidence = evidence_utilization_rate(parsed, evidence_set)
    counts = ResponseCounts(m, m_ground, r, r_entail, n, n_cited, n_pcited, k, n_evidence)
    return MetricsReport(record.id, variant, counts, detect_refusal(raw.text, refusal_patterns))


def evaluate_corpus(records: Sequence[BenchmarkRecord], variants: Sequence[Variant] | None = None,
                    judge: Judge | Backend | None = None, jobs: int = 1,
                    refusal_patterns: Iterable[str] | None = None,
                    skip_failed: bool = False) -> tuple[list[MetricsReport], list[tuple[str, str, str]]]:
    """Evaluate every (record, variant) pair present.

    Returns the reports sorted by record id, then variant, plus a list of
    ``(record_id, variant, error)`` for skipped pairs when ``skip_failed`` is set.
    """
    judge = as_judge(judge)
    patterns = None if refusal_patterns is None else tuple(refusal_patterns)
    wanted = list(Variant) if variants is None else [Variant.parse(v) for v in variants]
    tasks = [(rec, v) for rec in records for v in wanted if v in rec.responses]

    def run(task):
        rec, v = task
        try:
            return evaluate_response(rec, v, judge, patterns), None
        except Exception as exc:
            if not skip_failed:
                raise
            return None, (rec.id, v.value, str(exc))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    reports = [rep for rep, _ in results if rep is not None]
    failures = [err for _, err in results if err is not None]
    order = list(Variant)
    reports.sort(key=lambda rep: (rep.record_id, order.index(rep.variant)))
    return reports, failures


# --- corpus aggregation -----------------------------------------------------

_FRACTION_PARTS = {
    "cgr": ("m_ground", "m"),
    "ccr": ("r_entail", "r"),
    "psr": ("n_pcited", "n_cited"),
    "scr": ("n_cited", "n"),
}


@dataclass(frozen=True)
class CorpusAggregate:
    mode: str
    n_records: int
    rates: dict[str, Rate] = field(default_factory=dict)
    undefined: dict[str, int] = field(default_factory=dict)
    refusal_rate: Rate = None

    def to_json(self) -> dict:
        out = {k: format_rate(v) for k, v in self.rates.items()}
        out.update(
            mode=self.mode,
            n_records=self.n_records,
            undefined=dict(self.undefined),
            refusal_rate=format_rate(self.refusal_rate),
        )
        return out


def _mean(values: list[Fraction]) -> Rate:
    return sum(values, Fraction(0)) / len(values) if values else None


def aggregate_corpus(reports: Sequence[MetricsReport], mode: str = "micro") -> CorpusAggregate:
    """Pool per-record results.

    ``micro`` sums numerators and denominators (records with an undefined rate
    add 0/0); ``macro`` averages the defined per-record rates. EUR is not a
    count ratio, so both modes average the defined per-record values.
    """
    if mode not in ("micro", "macro"):
        raise ValidationError(f"unknown aggregation mode {mode!r}")
    rates: dict[str, Rate] = {}
    undefined: dict[str, int] = {}
    for key in RATE_KEYS:
        per_record = [getattr(rep, key) for rep in reports]
        undefined[key] = sum(1 for v in per_record if v is None)
        if mode == "micro" and key in _FRACTION_PARTS:
            num_name, den_name = _FRACTION_PARTS[key]
            num = sum(getattr(rep.counts, num_name) for rep in reports)
            den = sum(getattr(rep.counts, den_name) for rep in reports)
            rates[key] = ratio(num, den)
        else:
            rates[key] = _mean([v for v in per_record if v is not None])
    refusal = ratio(sum(1 for rep in reports if rep.refusal), len(reports))
    return CorpusAggregate(mode, len(reports), rates, undefined, refusal)
