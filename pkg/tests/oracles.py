"""Independent brute-force recomputation of the five metrics.

Every (evidence, text) pair is judged, nothing is cached and no loop exits
early. Rates come straight from their defining formulas over the full
verdict matrix, so this shares only the parser and the raw predicate with
the pipeline under test.
"""

from __future__ import annotations

from fractions import Fraction

from groundcheck.judge import LexicalOracle
from groundcheck.model import BenchmarkRecord, Variant
from groundcheck.parser import clean_text, parse_response, segment_sentences


def _div(num, den):
    return None if den == 0 else Fraction(num, den)


def brute_force_metrics(record: BenchmarkRecord, variant: Variant, predicate=None) -> dict:
    predicate = predicate or LexicalOracle().entails
    raw = record.responses[variant]
    evidences = list(record.evidence_set)
    parsed = parse_response(raw, record.evidence_set)

    claims = [c for c in (clean_text(s) for s, _ in segment_sentences(raw.text)) if c]
    claim_matrix = [[predicate(ev.text, c) for ev in evidences] for c in claims]
    m = len(claims)
    m_ground = sum(1 for row in claim_matrix if any(row))

    r = r_entail = n_cited = n_pcited = 0
    used = set()
    for sentence in parsed.sentences:
        row = {ev.index: predicate(ev.text, sentence.text) if sentence.text else False for ev in evidences}
        verdicts = [ref.valid and row.get(ref.raw_index, False) for ref in sentence.citations]
        r += len(verdicts)
        r_entail += sum(verdicts)
        if verdicts:
            n_cited += 1
            n_pcited += all(verdicts)
        used.update(ref.raw_index for ref in sentence.citations if ref.valid)

    n = len(parsed.sentences)
    big_e = len(evidences)
    k = len(used)
    eur = None if big_e == 0 else Fraction(k, big_e) * (1 - Fraction(big_e - k, big_e * big_e))
    return {
        "counts": {"m": m, "m_ground": m_ground, "r": r, "r_entail": r_entail, "n": n,
                   "n_cited": n_cited, "n_pcited": n_pcited, "k_ground": k, "E": big_e},
        "cgr": _div(m_ground, m),
        "ccr": _div(r_entail, r),
        "psr": _div(n_pcited, n_cited),
        "scr": _div(n_cited, n),
        "eur": eur,
    }
