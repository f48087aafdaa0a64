"""Shared domain types plus benchmark/report file I/O.

Rates are kept as exact ``Fraction`` values derived from integer counts and are
only turned into floats when written out. That keeps micro aggregation (pooling
numerators and denominators) exact.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from groundcheck.errors import ValidationError

RATE_KEYS = ("cgr", "ccr", "psr", "scr", "eur")
COUNT_KEYS = ("m", "m_ground", "r", "r_entail", "n", "n_cited", "n_pcited", "k_ground", "E")


class EvidenceKind(str, enum.Enum):
    DESCRIPTION = "description"
    REVIEW = "review"
    QNA = "qna"


class Variant(str, enum.Enum):
    """Prompt baseline that produced a response."""

    VANILLA = "vanilla"
    GUIDED = "guided"
    CITATION = "citation"

    @classmethod
    def parse(cls, value: str | Variant) -> Variant:
        try:
            return cls(value.lower() if isinstance(value, str) else value)
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValidationError(f"unknown variant {value!r} (expected one of {names})") from None


@dataclass(frozen=True)
class Evidence:
    index: int
    kind: EvidenceKind
    text: str
    gold_relevant: bool | None = None

    def __post_init__(self):
        if not isinstance(self.index, int) or isinstance(self.index, bool) or self.index < 1:
            raise ValidationError(f"evidence index must be an integer >= 1, got {self.index!r}")
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError(f"evidence {self.index} has empty text")
        if self.gold_relevant is not None and not isinstance(self.gold_relevant, bool):
            raise ValidationError(f"evidence {self.index}: gold_relevant must be a boolean")

    def to_json(self) -> dict:
        out = {"index": self.index, "kind": self.kind.value, "text": self.text}
        if self.gold_relevant is not None:
            out["gold_relevant"] = self.gold_relevant
        return out


@dataclass(frozen=True)
class EvidenceSet:
    """Retrieved evidences in rank order; ``evidences[i].index == i + 1``."""

    evidences: tuple[Evidence, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "evidences", tuple(self.evidences))
        seen = set()
        for pos, ev in enumerate(self.evidences, start=1):
            if ev.index in seen:
                raise ValidationError(f"duplicate evidence index {ev.index}")
            seen.add(ev.index)
            if ev.index != pos:
                raise ValidationError(
                    f"evidence indices must be contiguous 1..{len(self.evidences)} in rank order; "
                    f"found {ev.index} at position {pos}"
                )

    def __len__(self) -> int:
        return len(self.evidences)

    def __iter__(self):
        return iter(self.evidences)

    def __getitem__(self, index: int) -> Evidence:
        """1-based lookup, matching the ``[n]`` markers."""
        if not 1 <= index <= len(self.evidences):
            raise IndexError(f"evidence index {index} out of range 1..{len(self.evidences)}")
        return self.evidences[index - 1]

    @classmethod
    def from_texts(cls, texts: Iterable[str], kind: EvidenceKind = EvidenceKind.REVIEW) -> EvidenceSet:
        return cls(tuple(Evidence(i, kind, t) for i, t in enumerate(texts, start=1)))


@dataclass(frozen=True)
class QueryRecord:
    id: str
    query: str
    evidence_set: EvidenceSet = field(default_factory=EvidenceSet)


@dataclass(frozen=True)
class RawResponse:
    text: str
    variant: Variant = Variant.CITATION


@dataclass(frozen=True)
class BenchmarkRecord:
    query_record: QueryRecord
    responses: Mapping[Variant, RawResponse] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.query_record.id

    @property
    def evidence_set(self) -> EvidenceSet:
        return self.query_record.evidence_set

    def with_responses(self, responses: Mapping[Variant, RawResponse]) -> BenchmarkRecord:
        merged = dict(self.responses)
        merged.update(responses)
        return BenchmarkRecord(self.query_record, merged)

    def to_json(self) -> dict:
        out = {
            "id": self.query_record.id,
            "query": self.query_record.query,
            "evidences": [ev.to_json() for ev in self.query_record.evidence_set],
        }
        if self.responses:
            out["responses"] = {v.value: r.text for v, r in sorted(self.responses.items())}
        return out

    @classmethod
    def from_json(cls, obj: object) -> BenchmarkRecord:
        if not isinstance(obj, dict):
            raise ValidationError("record must be a JSON object")
        for key in ("id", "query", "evidences"):
            if key not in obj:
                raise ValidationError(f"missing field {key!r}")
        if not isinstance(obj["id"], str) or not isinstance(obj["query"], str):
            raise ValidationError("'id' and 'query' must be strings")
        if not isinstance(obj["evidences"], list):
            raise ValidationError("'evidences' must be a list")
        evidences = []
        for raw in obj["evidences"]:
            if not isinstance(raw, dict):
                raise ValidationError("evidence must be an object")
            try:
                kind = EvidenceKind(raw.get("kind"))
            except ValueError:
                raise ValidationError(f"unknown evidence kind {raw.get('kind')!r}") from None
            evidences.append(Evidence(raw.get("index"), kind, raw.get("text"), raw.get("gold_relevant")))
        responses = {}
        for name, text in (obj.get("responses") or {}).items():
            variant = Variant.parse(name)
            if not isinstance(text, str):
                raise ValidationError(f"response {name!r} must be a string")
            responses[variant] = RawResponse(text, variant)
        return cls(QueryRecord(obj["id"], obj["query"], EvidenceSet(tuple(evidences))), responses)


def load_benchmark(path: str | Path) -> list[BenchmarkRecord]:
    """Read a benchmark JSONL file, validating every record.

    Errors carry the 1-based line number of the offending record.
    """
    records = []
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"malformed JSON: {exc.msg}", line=lineno) from None
            try:
                record = BenchmarkRecord.from_json(obj)
            except ValidationError as exc:
                raise ValidationError(str(exc), line=lineno) from None
            if record.id in ids:
                raise ValidationError(f"duplicate record id {record.id!r}", line=lineno)
            ids.add(record.id)
            records.append(record)
    return records


def dump_jsonl(rows: Iterable[dict], path: str | Path) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def save_benchmark(records: Iterable[BenchmarkRecord], path: str | Path) -> None:
    dump_jsonl((r.to_json() for r in records), path)


# --- metrics report types -------------------------------------------------


def ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


def utilization(k: int, n_evidence: int) -> Fraction | None:
    """Evidence utilization: (k/|E|) * (1 - (|E| - k)/|E|^2); undefined for |E| = 0."""
    if n_evidence == 0:
        return None
    e = Fraction(n_evidence)
    return (k / e) * (1 - (e - k) / (e * e))


@dataclass(frozen=True)
class ResponseCounts:
    m: int = 0
    m_ground: int = 0
    r: int = 0
    r_entail: int = 0
    n: int = 0
    n_cited: int = 0
    n_pcited: int = 0
    k_ground: int = 0
    evidence_count: int = 0

    def __post_init__(self):
        for name in ("m", "m_ground", "r", "r_entail", "n", "n_cited", "n_pcited", "k_ground", "evidence_count"):
            if getattr(self, name) < 0:
                raise ValidationError(f"count {name} must be non-negative")
        if not (
            self.m_ground <= self.m
            and self.r_entail <= self.r
            and self.n_pcited <= self.n_cited <= self.n
            and self.k_ground <= self.evidence_count
        ):
            raise ValidationError(f"inconsistent counts: {self}")

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "m_ground": self.m_ground,
            "r": self.r,
            "r_entail": self.r_entail,
            "n": self.n,
            "n_cited": self.n_cited,
            "n_pcited": self.n_pcited,
            "k_ground": self.k_ground,
            "E": self.evidence_count,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, int]) -> ResponseCounts:
        try:
            values = {k: int(obj[k]) for k in COUNT_KEYS}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad counts object: {exc}") from None
        values["evidence_count"] = values.pop("E")
        return cls(**values)


@dataclass(frozen=True)
class MetricsReport:
    """Counts for one (record, variant) pair. Rates are derived, never stored."""

    record_id: str
    variant: Variant
    counts: ResponseCounts
    refusal: bool = False

    @property
    def cgr(self) -> Fraction | None:
        return ratio(self.counts.m_ground, self.counts.m)

    @property
    def ccr(self) -> Fraction | None:
        return ratio(self.counts.r_entail, self.counts.r)

    @property
    def psr(self) -> Fraction | None:
        return ratio(self.counts.n_pcited, self.counts.n_cited)

    @property
    def scr(self) -> Fraction | None:
        return ratio(self.counts.n_cited, self.counts.n)

    @property
    def eur(self) -> Fraction | None:
        return utilization(self.counts.k_ground, self.counts.evidence_count)

    def rates(self) -> dict[str, Fraction | None]:
        return {key: getattr(self, key) for key in RATE_KEYS}

    def to_json(self) -> dict:
        out = {"id": self.record_id, "variant": self.variant.value, "refusal": self.refusal}
        out.update({k: format_rate(v) for k, v in self.rates().items()})
        out["counts"] = self.counts.to_json()
        return out


def format_rate(value) -> float | None:
    if value is None:
        return None
    return round(float(value), 4)


def _md_rate(value) -> str:
    return "n/a" if value is None else f"{float(value):.4f}"


def report_document(reports: Sequence[MetricsReport], mode: str = "micro") -> dict:
    """Build the report JSON object (per-record rows plus corpus aggregates)."""
    from groundcheck.metrics import aggregate_corpus

    reports = sorted(reports, key=lambda r: (r.record_id, list(Variant).index(r.variant)))
    doc = {"per_record": [r.to_json() for r in reports], "aggregate": {}}
    if reports:
        doc["aggregate"] = aggregate_corpus(reports, mode).to_json()
        by_variant = {}
        for variant in Variant:
            subset = [r for r in reports if r.variant is variant]
            if subset:
                by_variant[variant.value] = aggregate_corpus(subset, mode).to_json()
        doc["by_variant"] = by_variant
    return doc


def render_markdown(doc: Mapping) -> str:
    header = "| id | variant | CGR | CCR | PSR | SCR | EUR | refusal |"
    lines = ["## Per-record metrics", "", header, "|" + "---|" * 8]
    for row in doc["per_record"]:
        rates = " | ".join(_md_rate(row[k]) for k in RATE_KEYS)
        lines.append(f"| {row['id']} | {row['variant']} | {rates} | {'yes' if row['refusal'] else 'no'} |")
    lines += ["", "## Aggregate", ""]
    groups = doc.get("by_variant") or {}
    if doc["aggregate"]:
        lines.append(f"mode: {doc['aggregate']['mode']}")
        lines.append("")
        lines.append("| scope | records | CGR | CCR | PSR | SCR | EUR | refusal rate |")
        lines.append("|" + "---|" * 8)
        for scope, agg in [("all", doc["aggregate"]), *groups.items()]:
            rates = " | ".join(_md_rate(agg[k]) for k in RATE_KEYS)
            lines.append(f"| {scope} | {agg['n_records']} | {rates} | {_md_rate(agg['refusal_rate'])} |")
    else:
        lines.append("(no records)")
    return "\n".join(lines) + "\n"


def save_report(
    reports: Sequence[MetricsReport],
    path: str | Path,
    format: str = "json",
    mode: str = "micro",
) -> None:
    """Write reports as JSON or markdown. Output is byte-stable for identical input."""
    doc = report_document(reports, mode)
    if format == "json":
        text = json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    elif format == "markdown":
        text = render_markdown(doc)
    else:
        raise ValidationError(f"unknown report format {format!r}")
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
