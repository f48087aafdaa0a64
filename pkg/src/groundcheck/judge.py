"""Entailment judging, claim decomposition, refusal detection and post-hoc citing.

Two backends implement the entailment predicate:

* ``LexicalOracle`` -- deterministic token-overlap rule, used for tests and for
  generated corpora where it is exact by construction.
* ``RemoteJudge`` -- any LLM behind the small HTTP contract
  (``POST {base}/nli`` and ``POST {base}/decompose``).

``Judge`` wraps a backend with a thread-safe memo cache and bounded parallelism.
"""

from __future__ import annotations

import os
import re
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from groundcheck import _http
from groundcheck.errors import BackendError, TemplateError, ValidationError
from groundcheck.model import EvidenceSet
from groundcheck.parser import CitationRef, ParsedResponse, clean_text, segment_sentences

URL_ENV = "GROUNDCHECK_JUDGE_URL"
TOKEN_ENV = "GROUNDCHECK_JUDGE_TOKEN"
DEFAULT_PARALLELISM = 8

STOPWORDS = frozenset(
    """
    a about above after again against all also am an and any are as at be because been
    before being below between both but by can could did do does doing down during each
    few for from further had has have having he her here hers herself him himself his how
    i if in into is it its itself just me more most my myself nor of off on once only or
    other our ours ourselves out over own same she should so some such than that the their
    theirs them themselves then there these they this those through to too under until up
    very was we were what when where which while who whom why will with would you your
    yours yourself yourselves s t
    """.split()
)

_NON_WORD_RE = re.compile(r"[^\w]+|_+")


def normalize(text: str) -> str:
    """Lowercase, turn punctuation into spaces, collapse whitespace."""
    return " ".join(_NON_WORD_RE.sub(" ", text.lower()).split())


@lru_cache(maxsize=65536)
def _premise_view(premise: str) -> tuple[str, frozenset[str]]:
    norm = normalize(premise)
    return f" {norm} ", frozenset(norm.split())


def content_tokens(text: str) -> list[str]:
    return [tok for tok in normalize(text).split() if tok not in STOPWORDS]


@dataclass(frozen=True)
class Claim:
    text: str
    source_sentence_index: int | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("claim text must be non-empty")


@dataclass(frozen=True)
class EntailmentVerdict:
    entails: bool
    backend: str
    cached: bool = False


class Backend(Protocol):
    kind: str

    def entails(self, premise: str, hypothesis: str) -> bool: ...

    def decompose(self, text: str) -> list[str]: ...


class LexicalOracle:
    """Token-overlap entailment.

    ``hypothesis`` is entailed when its normalized form occurs inside the
    normalized premise, or when at least ``threshold`` of its content tokens
    (stopwords removed) appear in the premise.
    """

    kind = "lexical"

    def __init__(self, threshold: float = 0.8):
        self.threshold = threshold

    def entails(self, premise: str, hypothesis: str) -> bool:
        padded, vocab = _premise_view(premise)
        hyp = normalize(hypothesis)
        if hyp and f" {hyp} " in padded:
            return True
        tokens = [t for t in hyp.split() if t not in STOPWORDS]
        if not tokens:
            return False
        hits = sum(1 for t in tokens if t in vocab)
        return hits >= self.threshold * len(tokens) - 1e-12

    def decompose(self, text: str) -> list[str]:
        out = []
        for sentence, _ in segment_sentences(text):
            cleaned = clean_text(sentence)
            if cleaned:
                out.append(cleaned)
        return out


class RemoteJudge:
    kind = "remote"

    def __init__(self, base_url: str, token: str | None, timeout: float = 30.0,
                 attempts: int = _http.ATTEMPTS, backoff: float = _http.BACKOFF_START):
        if not base_url:
            raise ValidationError("remote judge needs a base URL")
        if not token:
            raise ValidationError("remote judge needs a credential token")
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff

    @classmethod
    def from_env(cls, base_url: str | None = None, token: str | None = None, **kwargs) -> RemoteJudge:
        return cls(base_url or os.environ.get(URL_ENV, ""), token or os.environ.get(TOKEN_ENV), **kwargs)

    def _post(self, route: str, payload: dict) -> dict:
        return _http.post_json(f"{self.base_url}/{route}", payload, self.token, self.timeout,
                               self.attempts, self.backoff)

    def entails(self, premise: str, hypothesis: str) -> bool:
        body = self._post("nli", {"premise": premise, "hypothesis": hypothesis})
        verdict = body.get("entails")
        if not isinstance(verdict, bool):
            raise BackendError(f"malformed /nli reply: {body!r}")
        return verdict

    def decompose(self, text: str) -> list[str]:
        body = self._post("decompose", {"text": text})
        claims = body.get("claims")
        if not isinstance(claims, list) or not all(isinstance(c, str) for c in claims):
            raise BackendError(f"malformed /decompose reply: {body!r}")
        return [c.strip() for c in claims if c.strip()]


class Judge:
    """Memoizing front end for a backend.

    ``calls`` counts every ``entails`` request; ``backend_calls`` counts the ones
    that actually reached the backend. Concurrent requests for the same pair
    wait on a single in-flight evaluation.
    """

    def __init__(self, backend: Backend | None = None, cache: bool = True,
                 max_workers: int = DEFAULT_PARALLELISM):
        self.backend = backend if backend is not None else LexicalOracle()
        self.cache_enabled = cache
        self.max_workers = max_workers
        self._cache: dict[tuple[str, str], Future] = {}
        self._lock = threading.Lock()
        self.calls = 0
        self.backend_calls = 0

    @property
    def kind(self) -> str:
        return self.backend.kind

    def entails(self, premise: str, hypothesis: str) -> EntailmentVerdict:
        if not premise or not premise.strip():
            raise ValidationError("premise must be non-empty")
        if not hypothesis or not hypothesis.strip():
            raise ValidationError("hypothesis must be non-empty")
        key = (premise, hypothesis)
        with self._lock:
            self.calls += 1
            if self.cache_enabled:
                fut = self._cache.get(key)
                owner = fut is None
                if owner:
                    fut = self._cache[key] = Future()
            else:
                fut, owner = None, True
            if owner:
                self.backend_calls += 1
        if not owner:
            return EntailmentVerdict(fut.result(), self.kind, cached=True)
        try:
            value = bool(self.backend.entails(premise, hypothesis))
        except BaseException as exc:
            if fut is not None:
                with self._lock:
                    self._cache.pop(key, None)
                fut.set_exception(exc)
            raise
        if fut is not None:
            fut.set_result(value)
        return EntailmentVerdict(value, self.kind, cached=False)

    def entails_many(self, pairs: Sequence[tuple[str, str]]) -> list[bool]:
        """Judge many pairs, at most ``max_workers`` in flight; order is preserved."""
        if self.max_workers <= 1 or len(pairs) <= 1 or self.kind == LexicalOracle.kind:
            return [self.entails(p, h).entails for p, h in pairs]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return [v.entails for v in pool.map(lambda ph: self.entails(*ph), pairs)]

    def decompose(self, text: str) -> list[str]:
        return self.backend.decompose(text)


def as_judge(judge: Judge | Backend | None) -> Judge:
    if isinstance(judge, Judge):
        return judge
    return Judge(judge)


def decompose_claims(response_text: str, backend: Judge | Backend | None = None) -> list[Claim]:
    """Split a response into atomic claims.

    The lexical fallback yields one claim per sentence with markers stripped;
    a remote backend delegates to the judge's ``/decompose`` route.
    """
    judge = as_judge(backend)
    if not response_text.strip():
        return []
    if judge.kind == LexicalOracle.kind:
        claims = []
        for i, (sentence, _) in enumerate(segment_sentences(response_text)):
            cleaned = clean_text(sentence)
            if cleaned:
                claims.append(Claim(cleaned, i))
        return claims
    return [Claim(text) for text in judge.decompose(response_text)]


# --- refusal signals --------------------------------------------------------

REFUSAL_HYPOTHESIS = "The requested information is not available."


def _asset(name: str) -> str:
    return resources.files("groundcheck").joinpath("templates", name).read_text(encoding="utf-8")


def parse_pattern_lines(text: str) -> tuple[str, ...]:
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line.lower())
    return tuple(out)


def load_refusal_patterns(path: str | Path | None = None) -> tuple[str, ...]:
    """Read a pattern file: one pattern per line, ``#`` starts a comment."""
    if path is None:
        return DEFAULT_REFUSAL_PATTERNS
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TemplateError(f"cannot read refusal patterns {path}: {exc.strerror}") from None
    return parse_pattern_lines(text)


DEFAULT_REFUSAL_PATTERNS = parse_pattern_lines(_asset("refusal_patterns.txt"))


def _fold_quotes(text: str) -> str:
    return text.replace("’", "'").replace("‘", "'")


def detect_refusal(response_text: str, patterns: Iterable[str] | None = None,
                   judge: Judge | None = None) -> bool:
    """True when any sentence carries a refusal signal.

    Pattern matching is case-insensitive. With ``judge`` given, a sentence also
    counts when the judge says it entails ``REFUSAL_HYPOTHESIS``.
    """
    pats = tuple(p.lower() for p in (DEFAULT_REFUSAL_PATTERNS if patterns is None else patterns))
    for sentence, _ in segment_sentences(response_text):
        low = _fold_quotes(sentence).lower()
        if any(p in low for p in pats):
            return True
        if judge is not None:
            cleaned = clean_text(sentence)
            if cleaned and judge.entails(cleaned, REFUSAL_HYPOTHESIS).entails:
                return True
    return False


def posthoc_annotate(parsed: ParsedResponse, evidence_set: EvidenceSet,
                     backend: Judge | Backend | None = None) -> ParsedResponse:
    """Attach citation ``e`` to every sentence that evidence ``e`` entails."""
    if parsed.has_citations:
        raise ValidationError("posthoc_annotate expects a response without citations")
    judge = as_judge(backend)
    sentences = []
    for sentence in parsed.sentences:
        refs = []
        if sentence.text:
            for ev in evidence_set:
                if judge.entails(ev.text, sentence.text).entails:
                    refs.append(CitationRef(ev.index, True))
        sentences.append(replace(sentence, citations=tuple(refs)))
    return replace(parsed, sentences=tuple(sentences))
