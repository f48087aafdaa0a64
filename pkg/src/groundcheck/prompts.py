"""Baseline prompt assembly (vanilla / guided / citation) and generation backends.

Templates are plain-text files with ``{{query}}`` and ``{{evidence_block}}``
placeholders. The citation instruction block is always the last segment, so a
citation prompt is the guided prompt plus a suffix; the paged cache simulator
relies on that.
"""

from __future__ import annotations

import enum
import hashlib
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from groundcheck import _http
from groundcheck.benchgen import DEFAULT_KNOBS, MockKnobs, PlantedEntry, mock_generate_response
from groundcheck.errors import BackendError, TemplateError, ValidationError
from groundcheck.model import BenchmarkRecord, QueryRecord, RawResponse, Variant

GEN_URL_ENV = "GROUNDCHECK_GEN_URL"
GEN_TOKEN_ENV = "GROUNDCHECK_GEN_TOKEN"
SEPARATOR = "\n\n"

TEMPLATE_FILES = {
    "system_base": "system_base.txt",
    "few_shot": "few_shot.txt",
    "evidence_block": "evidence_block.txt",
    "no_evidence": "no_evidence.txt",
    "query": "query.txt",
    "citation_instr": "citation_instr.txt",
}


class SegmentKind(str, enum.Enum):
    SYSTEM_BASE = "system_base"
    FEW_SHOT = "few_shot"
    EVIDENCE_BLOCK = "evidence_block"
    QUERY = "query"
    CITATION_INSTR = "citation_instr"


@dataclass(frozen=True)
class TemplateSet:
    system_base: str
    few_shot: str
    evidence_block: str
    no_evidence: str
    query: str
    citation_instr: str

    @classmethod
    def load(cls, directory: str | Path | None = None) -> TemplateSet:
        """Read every template from ``directory`` (default: the bundled set)."""
        texts = {}
        for name, filename in TEMPLATE_FILES.items():
            try:
                if directory is None:
                    raw = resources.files("groundcheck").joinpath("templates", filename).read_text("utf-8")
                else:
                    raw = (Path(directory) / filename).read_text(encoding="utf-8")
            except (OSError, FileNotFoundError) as exc:
                raise TemplateError(f"missing template {filename} in {directory or 'package data'}: {exc}") from None
            texts[name] = raw.strip()
        return cls(**texts)


def token_id(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=4).digest(), "big") & 0x7FFFFFFF


def tokenize(text: str) -> list[int]:
    """Mock tokenizer: whitespace split, stable hash per token."""
    return [token_id(t) for t in text.split()]


@dataclass(frozen=True)
class AssembledPrompt:
    variant: Variant
    segments: tuple[tuple[SegmentKind, str], ...]
    token_ids: tuple[int, ...]
    segment_lengths: tuple[int, ...]
    record: QueryRecord | None = field(default=None, compare=False)

    @property
    def text(self) -> str:
        return SEPARATOR.join(text for _, text in self.segments)

    @property
    def citation_token_count(self) -> int:
        return sum(n for (kind, _), n in zip(self.segments, self.segment_lengths)
                   if kind is SegmentKind.CITATION_INSTR)

    @property
    def base_token_count(self) -> int:
        return len(self.token_ids) - self.citation_token_count

    @classmethod
    def from_segments(cls, variant: Variant, segments, record: QueryRecord | None = None) -> AssembledPrompt:
        segments = tuple((SegmentKind(k), t) for k, t in segments)
        per_segment = [tokenize(t) for _, t in segments]
        ids = tuple(tid for seg in per_segment for tid in seg)
        return cls(variant, segments, ids, tuple(len(s) for s in per_segment), record)


def evidence_block(record: QueryRecord, templates: TemplateSet) -> str:
    if not len(record.evidence_set):
        body = templates.no_evidence
    else:
        body = "\n".join(f"[{ev.index}] {ev.text}" for ev in record.evidence_set)
    return templates.evidence_block.replace("{{evidence_block}}", body)


def assemble(variant: Variant | str, query_record: QueryRecord,
             templates: TemplateSet | None = None) -> AssembledPrompt:
    variant = Variant.parse(variant)
    templates = templates or default_templates()
    segments = [(SegmentKind.SYSTEM_BASE, templates.system_base)]
    if variant is not Variant.VANILLA:
        segments.append((SegmentKind.FEW_SHOT, templates.few_shot))
    segments.append((SegmentKind.EVIDENCE_BLOCK, evidence_block(query_record, templates)))
    segments.append((SegmentKind.QUERY, templates.query.replace("{{query}}", query_record.query)))
    if variant is Variant.CITATION:
        segments.append((SegmentKind.CITATION_INSTR, templates.citation_instr))
    return AssembledPrompt.from_segments(variant, segments, query_record)


_DEFAULT_TEMPLATES: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = TemplateSet.load()
    return _DEFAULT_TEMPLATES


class MockGenerator:
    """Offline stand-in for the backbone model; records what it planted."""

    kind = "mock"

    def __init__(self, knobs: Mapping[Variant, MockKnobs] | None = None, seed: int = 0):
        self.knobs = dict(DEFAULT_KNOBS if knobs is None else knobs)
        self.seed = seed
        self.truth: dict[tuple[str, Variant], PlantedEntry] = {}

    def generate(self, prompt: AssembledPrompt) -> RawResponse:
        if prompt.record is None:
            raise ValidationError("mock generation needs the prompt's query record")
        knobs = self.knobs.get(prompt.variant, MockKnobs())
        raw, entry = mock_generate_response(BenchmarkRecord(prompt.record), prompt.variant, knobs, self.seed)
        self.truth[(prompt.record.id, prompt.variant)] = entry
        return raw


class RemoteGenerator:
    kind = "remote"

    def __init__(self, base_url: str, token: str | None, max_tokens: int = 512, timeout: float = 60.0,
                 attempts: int = _http.ATTEMPTS, backoff: float = _http.BACKOFF_START):
        if not base_url:
            raise ValidationError("remote generator needs a base URL")
        if not token:
            raise ValidationError("remote generator needs a credential token")
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff

    @classmethod
    def from_env(cls, base_url: str | None = None, token: str | None = None, **kwargs) -> RemoteGenerator:
        return cls(base_url or os.environ.get(GEN_URL_ENV, ""), token or os.environ.get(GEN_TOKEN_ENV), **kwargs)

    def generate(self, prompt: AssembledPrompt) -> RawResponse:
        body = _http.post_json(f"{self.base_url}/generate",
                               {"prompt": prompt.text, "max_tokens": self.max_tokens},
                               self.token, self.timeout, self.attempts, self.backoff)
        text = body.get("text")
        if not isinstance(text, str):
            raise BackendError(f"malformed /generate reply: {body!r}")
        return RawResponse(text, prompt.variant)


def generate(prompt: AssembledPrompt, backend: MockGenerator | RemoteGenerator) -> RawResponse:
    return backend.generate(prompt)
