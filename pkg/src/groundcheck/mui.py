"""Multi-UX inference over a simulated paged KV cache.

One prefill covers the base prompt plus the citation-instruction suffix. The
suffix always starts on a fresh page, so UX variants that do not need
citations decode against the base pages only, and their visible history is
exactly the history a standalone run of the base prompt would see.

KV tensors are modelled as a digest chain: each entry's digest hashes its
token id, its position and the previous digest. The mock model folds the
whole visible chain into its state, so any change in visible history changes
every generated token.
"""

from __future__ import annotations

import enum
import hashlib
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from groundcheck.errors import BudgetExceeded, ValidationError
from groundcheck.model import QueryRecord, Variant
from groundcheck.prompts import AssembledPrompt, SegmentKind, TemplateSet, assemble

DEFAULT_PAGE_SIZE = 16
_ZERO = bytes(16)


class PageTag(str, enum.Enum):
    BASE_PROMPT = "base_prompt"
    CITATION_INSTR = "citation_instr"
    DECODE = "decode"


@dataclass(frozen=True)
class KvEntry:
    token_id: int
    position: int
    digest: bytes


def chain_digest(prev: bytes, token_id: int, position: int) -> bytes:
    h = hashlib.blake2b(prev, digest_size=16)
    h.update(token_id.to_bytes(8, "big", signed=True))
    h.update(position.to_bytes(8, "big"))
    return h.digest()


def verify_chain(entries: Sequence[KvEntry]) -> bool:
    """Recompute the digest chain; False if any entry was tampered with."""
    prev = _ZERO
    for e in entries:
        if chain_digest(prev, e.token_id, e.position) != e.digest:
            return False
        prev = e.digest
    return True


@dataclass
class Page:
    id: int
    capacity: int
    tag: PageTag
    entries: list[KvEntry] = field(default_factory=list)
    refcount: int = 0
    sealed: bool = False

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def append(self, entry: KvEntry) -> None:
        if self.sealed:
            raise RuntimeError(f"page {self.id} is sealed")
        if self.full:
            raise RuntimeError(f"page {self.id} is full")
        self.entries.append(entry)


class PageAllocator:
    """Fixed-size pages with reference counts and an optional page budget.

    All mutations go through one lock, so streams running in threads can share
    an allocator safely.
    """

    def __init__(self, page_size: int = DEFAULT_PAGE_SIZE, budget: int | None = None):
        if page_size < 1:
            raise ValidationError("page size must be >= 1")
        if budget is not None and budget < 0:
            raise ValidationError("page budget must be >= 0")
        self.page_size = page_size
        self.budget = budget
        self.pages: dict[int, Page] = {}
        self._next_id = 0
        self._lock = threading.Lock()
        self.total_allocated = 0
        self.peak_live = 0
        self.peak_refcount = 0

    @property
    def live_pages(self) -> int:
        return len(self.pages)

    def allocate(self, tag: PageTag) -> Page:
        with self._lock:
            if self.budget is not None and len(self.pages) >= self.budget:
                raise BudgetExceeded(f"page budget of {self.budget} exhausted")
            page = Page(self._next_id, self.page_size, tag, refcount=1)
            self._next_id += 1
            self.pages[page.id] = page
            self.total_allocated += 1
            self.peak_live = max(self.peak_live, len(self.pages))
            self.peak_refcount = max(self.peak_refcount, 1)
            return page

    def retain(self, page_ids: Sequence[int]) -> None:
        with self._lock:
            for pid in page_ids:
                page = self.pages[pid]
                page.refcount += 1
                self.peak_refcount = max(self.peak_refcount, page.refcount)

    def release(self, page_ids: Sequence[int]) -> None:
        with self._lock:
            for pid in page_ids:
                page = self.pages[pid]
                page.refcount -= 1
                if page.refcount == 0:
                    del self.pages[pid]

    def unreferenced(self) -> int:
        """Pages still allocated although nothing references them (leaks)."""
        return sum(1 for p in self.pages.values() if p.refcount <= 0)

    def entries(self, page_ids: Sequence[int]) -> list[KvEntry]:
        return [e for pid in page_ids for e in self.pages[pid].entries]


@dataclass(frozen=True)
class UxVariant:
    name: str
    needs_citation: bool = False

    @classmethod
    def parse(cls, text: str) -> UxVariant:
        """``name`` or ``name:cite``."""
        name, _, flag = text.partition(":")
        if not name or flag not in ("", "cite"):
            raise ValidationError(f"bad UX variant {text!r}; expected name or name:cite")
        return cls(name, flag == "cite")


@dataclass(frozen=True)
class PageTable:
    base_pages: tuple[int, ...]
    citation_pages: tuple[int, ...] = ()

    @property
    def page_ids(self) -> tuple[int, ...]:
        return self.base_pages + self.citation_pages


@dataclass(frozen=True)
class CacheStats:
    prefill_tokens_shared: int = 0
    prefill_tokens_naive: int = 0
    pages_allocated: int = 0
    pages_naive: int = 0
    peak_refcount: int = 0
    kv_entries_created: int = 0
    prefill_passes: int = 0
    decode_pages: int = 0

    @property
    def saved_tokens(self) -> int:
        return self.prefill_tokens_naive - self.prefill_tokens_shared

    def __add__(self, other: CacheStats) -> CacheStats:
        return CacheStats(
            self.prefill_tokens_shared + other.prefill_tokens_shared,
            self.prefill_tokens_naive + other.prefill_tokens_naive,
            self.pages_allocated + other.pages_allocated,
            self.pages_naive + other.pages_naive,
            max(self.peak_refcount, other.peak_refcount),
            self.kv_entries_created + other.kv_entries_created,
            self.prefill_passes + other.prefill_passes,
            self.decode_pages + other.decode_pages,
        )

    def to_json(self) -> dict:
        return {
            "prefill_tokens_shared": self.prefill_tokens_shared,
            "prefill_tokens_naive": self.prefill_tokens_naive,
            "saved_tokens": self.saved_tokens,
            "pages_allocated": self.pages_allocated,
            "pages_naive": self.pages_naive,
            "peak_refcount": self.peak_refcount,
            "kv_entries_created": self.kv_entries_created,
            "prefill_passes": self.prefill_passes,
            "decode_pages": self.decode_pages,
        }


class MockModel:
    """Deterministic next-token function of the visible history."""

    def __init__(self, vocab_size: int = 2**31 - 1):
        self.vocab_size = vocab_size

    def absorb(self, state: bytes, entry: KvEntry) -> bytes:
        h = hashlib.blake2b(state, digest_size=16)
        h.update(entry.digest)
        h.update(entry.token_id.to_bytes(8, "big", signed=True))
        h.update(entry.position.to_bytes(8, "big"))
        return h.digest()

    def state_of(self, view: Sequence[KvEntry]) -> bytes:
        state = _ZERO
        for e in view:
            state = self.absorb(state, e)
        return state

    def next_token(self, state: bytes) -> int:
        return int.from_bytes(state[:8], "big") % self.vocab_size


def _page_tokens(allocator: PageAllocator, tokens: Sequence[int], start_pos: int, prev: bytes,
                 tag: PageTag, acquired: list[int]) -> tuple[list[int], bytes, int]:
    """Write ``tokens`` onto fresh pages of ``tag``; returns (page ids, last digest, entries)."""
    page_ids = []
    page = None
    for offset, tid in enumerate(tokens):
        if page is None or page.full:
            if page is not None:
                page.sealed = True
            page = allocator.allocate(tag)
            acquired.append(page.id)
            page_ids.append(page.id)
        pos = start_pos + offset
        prev = chain_digest(prev, tid, pos)
        page.append(KvEntry(tid, pos, prev))
    if page is not None:
        page.sealed = True
    return page_ids, prev, len(tokens)


def _check_suffix_last(prompt: AssembledPrompt) -> None:
    kinds = [k for k, _ in prompt.segments]
    if SegmentKind.CITATION_INSTR in kinds:
        first = kinds.index(SegmentKind.CITATION_INSTR)
        if any(k is not SegmentKind.CITATION_INSTR for k in kinds[first:]):
            raise ValidationError("citation instructions must be the last prompt segment")


def prefill(allocator: PageAllocator, prompt: AssembledPrompt, include_citation: bool = True,
            acquired: list[int] | None = None) -> PageTable:
    """Page the whole prompt in one pass, starting the citation suffix on a new page."""
    _check_suffix_last(prompt)
    acquired = [] if acquired is None else acquired
    base_len = prompt.base_token_count
    base_tokens = prompt.token_ids[:base_len]
    base_ids, last, _ = _page_tokens(allocator, base_tokens, 0, _ZERO, PageTag.BASE_PROMPT, acquired)
    cite_ids: list[int] = []
    if include_citation:
        cite_ids, _, _ = _page_tokens(allocator, prompt.token_ids[base_len:], base_len, last,
                                      PageTag.CITATION_INSTR, acquired)
    return PageTable(tuple(base_ids), tuple(cite_ids))


def decode_view(allocator: PageAllocator, table: PageTable, ux: UxVariant) -> list[KvEntry]:
    """Visible history for ``ux``: base pages, plus citation pages if it cites."""
    page_ids = table.page_ids if ux.needs_citation else table.base_pages
    view = allocator.entries(page_ids)
    for expected, entry in enumerate(view):
        if entry.position != expected:
            raise RuntimeError(f"paging bug: position {entry.position} found where {expected} was expected")
    return view


@dataclass
class _Stream:
    ux: UxVariant
    view: list[KvEntry]
    view_pages: tuple[int, ...]
    max_steps: int
    model: MockModel
    state: bytes = b""
    prev: bytes = _ZERO
    position: int = 0
    output: list[int] = field(default_factory=list)
    pages: list[int] = field(default_factory=list)
    current: Page | None = None

    def start(self, allocator: PageAllocator) -> None:
        allocator.retain(self.view_pages)
        self.state = self.model.state_of(self.view)
        self.prev = self.view[-1].digest if self.view else _ZERO
        self.position = len(self.view)

    @property
    def done(self) -> bool:
        return len(self.output) >= self.max_steps

    def step(self, allocator: PageAllocator) -> None:
        tid = self.model.next_token(self.state)
        self.prev = chain_digest(self.prev, tid, self.position)
        entry = KvEntry(tid, self.position, self.prev)
        if self.current is None or self.current.full:
            self.current = allocator.allocate(PageTag.DECODE)
            self.pages.append(self.current.id)
        self.current.append(entry)
        self.state = self.model.absorb(self.state, entry)
        self.position += 1
        self.output.append(tid)

    def finish(self, allocator: PageAllocator) -> None:
        allocator.release(self.pages)
        allocator.release(self.view_pages)
        self.pages = []


def decode(allocator: PageAllocator, view: list[KvEntry], model: MockModel, max_steps: int,
           view_pages: Sequence[int] = ()) -> list[int]:
    """Generate ``max_steps`` tokens onto private decode pages, then free them."""
    stream = _Stream(UxVariant("adhoc"), view, tuple(view_pages), max_steps, model)
    stream.start(allocator)
    try:
        while not stream.done:
            stream.step(allocator)
    finally:
        stream.finish(allocator)
    return stream.output


@dataclass
class MultiUxResult:
    outputs: dict[str, list[int]]
    stats: CacheStats


def _validate_variants(variants: Sequence[UxVariant]) -> None:
    if not variants:
        raise ValidationError("at least one UX variant is required")
    names = [v.name for v in variants]
    if len(set(names)) != len(names):
        raise ValidationError("UX variant names must be unique")
    if sum(v.needs_citation for v in variants) > 1:
        raise ValidationError("at most one UX variant may need citations")


def own_prompt(prompt: AssembledPrompt, ux: UxVariant) -> AssembledPrompt:
    """The prompt a standalone deployment of ``ux`` would use."""
    if ux.needs_citation:
        return prompt
    segments = [(k, t) for k, t in prompt.segments if k is not SegmentKind.CITATION_INSTR]
    variant = Variant.GUIDED if prompt.variant is Variant.CITATION else prompt.variant
    return AssembledPrompt.from_segments(variant, segments, prompt.record)


def run_multi_ux(request: QueryRecord | AssembledPrompt, variants: Sequence[UxVariant],
                 allocator: PageAllocator | None = None, *, budget: int | None = None,
                 page_size: int = DEFAULT_PAGE_SIZE, max_steps: int = 8, max_concurrent: int = 2,
                 model: MockModel | None = None, templates: TemplateSet | None = None) -> MultiUxResult:
    """Serve every UX variant of one request from a single prefill.

    Decode streams are admitted FIFO, at most ``max_concurrent`` at a time. On
    budget exhaustion every page taken by this request is released before the
    error propagates.
    """
    _validate_variants(variants)
    if max_concurrent < 1:
        raise ValidationError("max_concurrent must be >= 1")
    allocator = allocator or PageAllocator(page_size, budget)
    model = model or MockModel()
    prompt = request if isinstance(request, AssembledPrompt) else assemble(Variant.CITATION, request, templates)
    wants_citation = any(v.needs_citation for v in variants)
    if wants_citation and all(k is not SegmentKind.CITATION_INSTR for k, _ in prompt.segments):
        raise ValidationError("a UX needs citations but the prompt has no citation instructions")

    base_len = prompt.base_token_count
    cite_len = prompt.citation_token_count
    acquired: list[int] = []
    running: list[_Stream] = []
    table = None
    allocator.peak_refcount = 0
    try:
        table = prefill(allocator, prompt, include_citation=wants_citation, acquired=acquired)
        entries_created = base_len + (cite_len if wants_citation else 0)
        queue = deque(
            _Stream(ux, view, pages, max_steps, model)
            for ux in variants
            for pages in [table.page_ids if ux.needs_citation else table.base_pages]
            for view in [decode_view(allocator, table, ux)]
        )
        outputs: dict[str, list[int]] = {}
        decode_pages = 0
        while queue or running:
            while queue and len(running) < max_concurrent:
                stream = queue.popleft()
                stream.start(allocator)
                running.append(stream)
            for stream in list(running):
                stream.step(allocator)
                if stream.done:
                    decode_pages += len(stream.pages)
                    stream.finish(allocator)
                    running.remove(stream)
                    outputs[stream.ux.name] = stream.output
    except BaseException:
        for stream in running:
            stream.finish(allocator)
        if table is not None:
            allocator.release(table.page_ids)
        else:
            allocator.release(acquired)
        raise
    allocator.release(table.page_ids)

    naive_tokens = [base_len + (cite_len if ux.needs_citation else 0) for ux in variants]
    stats = CacheStats(
        prefill_tokens_shared=entries_created,
        prefill_tokens_naive=sum(naive_tokens),
        pages_allocated=len(table.page_ids),
        pages_naive=sum(math.ceil(t / allocator.page_size) for t in naive_tokens),
        peak_refcount=allocator.peak_refcount,
        kv_entries_created=entries_created,
        prefill_passes=1,
        decode_pages=decode_pages,
    )
    return MultiUxResult({ux.name: outputs[ux.name] for ux in variants}, stats)


def standalone_decode(prompt: AssembledPrompt, max_steps: int = 8, page_size: int = DEFAULT_PAGE_SIZE,
                      model: MockModel | None = None) -> list[int]:
    """Prefill ``prompt`` on its own (no sharing, no page seam) and decode it."""
    allocator = PageAllocator(page_size)
    acquired: list[int] = []
    page_ids, _, _ = _page_tokens(allocator, prompt.token_ids, 0, _ZERO, PageTag.BASE_PROMPT, acquired)
    view = allocator.entries(page_ids)
    try:
        return decode(allocator, view, model or MockModel(), max_steps, page_ids)
    finally:
        allocator.release(page_ids)
