"""Seeded benchmark corpora and a mock response generator with planted counts.

Every evidence carries one *core* statement, ``the <attr> of the <product> is
<v1> and <v2>``, wrapped in a kind-specific prefix. Within a record no two cores
share the same content-token set, so a restated core is entailed by its own
evidence and by no other one under the lexical oracle (any other evidence
matches at most 3 of its 4 content tokens). Unsupported sentences are built
from filler words that never occur in any evidence. The counts planted by
``mock_generate_response`` are therefore exact ground truth for the metrics.

Randomness: numpy ``PCG64`` seeded through ``SeedSequence``. Record ``i`` of a
corpus draws from ``SeedSequence(seed, spawn_key=(shape_code, i))``; the mock
response for ``(record, variant)`` draws from
``SeedSequence(seed, spawn_key=(blake2b64(record_id), variant_code))``.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from groundcheck.errors import ValidationError
from groundcheck.judge import STOPWORDS, normalize
from groundcheck.model import (
    BenchmarkRecord,
    Evidence,
    EvidenceKind,
    EvidenceSet,
    QueryRecord,
    RawResponse,
    ResponseCounts,
    Variant,
    dump_jsonl,
)

SYNTHETIC_QUERY = "What do customers say about the pros and cons?"
REAL_WORLD_RELEVANCE = 0.411
SHAPES = {"synthetic": 1, "noisy": 2}
VARIANT_CODES = {Variant.VANILLA: 1, Variant.GUIDED: 2, Variant.CITATION: 3}


@dataclass(frozen=True)
class Archetype:
    product: str
    attributes: tuple[str, ...]
    values: tuple[str, ...]

    @classmethod
    def from_json(cls, obj: Mapping) -> Archetype:
        return cls(obj["product"], tuple(obj["attributes"]), tuple(obj["values"]))

    @property
    def n_cores(self) -> int:
        return len(self.attributes) * math.comb(len(self.values), 2)


DEFAULT_VOCABULARY = (
    Archetype("sneakers", ("fit", "sole", "laces", "cushioning", "toebox"),
              ("snug", "roomy", "grippy", "springy", "narrow", "breathable", "flimsy", "flexible", "stiff", "squeaky")),
    Archetype("blender", ("motor", "jar", "blades", "lid", "controls"),
              ("powerful", "noisy", "leakproof", "razor", "chunky", "smooth", "wobbly", "quiet", "speedy", "bulky")),
    Archetype("headphones", ("bass", "earcups", "headband", "battery", "microphone"),
              ("punchy", "muddy", "plush", "clamping", "crisp", "tinny", "longlasting", "comfy", "muffled", "balanced")),
    Archetype("tent", ("poles", "rainfly", "zipper", "floor", "vents"),
              ("waterproof", "drafty", "spacious", "cramped", "lightweight", "durable", "sagging", "taut",
               "ventilated", "leaky")),
    Archetype("backpack", ("straps", "pockets", "frame", "buckle", "fabric"),
              ("padded", "ergonomic", "ripstop", "capacious", "cluttered", "secure", "scratchy", "rugged",
               "saggy", "organized")),
    Archetype("kettle", ("spout", "handle", "thermostat", "base", "whistle"),
              ("dribbly", "scalding", "precise", "rapid", "sleek", "rusty", "shrill", "cordless", "dented", "steady")),
    Archetype("mattress", ("foam", "coils", "edges", "cover", "firmness"),
              ("supportive", "cooling", "bouncy", "firm", "pillowy", "odorless", "sinking", "hot", "lumpy",
               "luxurious")),
    Archetype("drill", ("chuck", "torque", "trigger", "charger", "clutch"),
              ("tight", "strong", "responsive", "jammed", "overheating", "compact", "weighty", "reliable",
               "underpowered", "vibrating")),
    Archetype("smartwatch", ("strap", "display", "clasp", "sensors", "crown"),
              ("bright", "dim", "accurate", "glitchy", "elegant", "scratched", "readable", "slim", "sweaty",
               "waterresistant")),
    Archetype("umbrella", ("canopy", "ribs", "shaft", "runner", "tip"),
              ("windproof", "fragile", "vented", "collapsible", "automatic", "bent", "oversized", "dripping",
               "portable", "stylish")),
)

EVIDENCE_TEMPLATES = {
    EvidenceKind.REVIEW: ("I found that {core}.", "Honestly, {core}.", "After two weeks of daily use, {core}."),
    EvidenceKind.DESCRIPTION: ("Seller listing: {core}.", "Manufacturer details: {core}."),
    EvidenceKind.QNA: ("Q: How does it hold up? A: {core}.", "Q: Any complaints? A: Mostly that {core}."),
}
NOISY_QUERY_TEMPLATES = (
    "How is the {attr} of the {product}?",
    "Do customers like the {attr} on this {product}?",
    "Is the {product} worth buying for its {attr}?",
    "Are there reviews from customers who've had the {product} for over a year?",
)
FILLER_WORDS = (
    "zorbly", "quenth", "vashmir", "plonktic", "grelvish", "mirtanza", "oskavel", "thrumbic", "yendral",
    "clovesque", "brastin", "kelmoric", "splindar", "wunthly", "fozzeric", "drapneth", "quillomer", "snarvic",
    "jexotal", "prumbling", "tovenish", "glarkent", "hisselby", "nurvolent",
)
REFUSAL_SENTENCE = "The reviews do not provide information about this."

_CORE_RE = re.compile(r"(the (\w+) of the (\w+) is (\w+) and (\w+))\.$")


def _core(attr: str, product: str, v1: str, v2: str) -> str:
    return f"the {attr} of the {product} is {v1} and {v2}"


def _validate_vocabulary(vocabulary: Sequence[Archetype]) -> None:
    if not vocabulary:
        raise ValidationError("product_vocabulary must not be empty")
    scaffold = set()
    for templates in EVIDENCE_TEMPLATES.values():
        for tpl in templates:
            scaffold.update(normalize(tpl.replace("{core}", "")).split())
    scaffold.update(normalize(REFUSAL_SENTENCE).split())
    fillers = set(FILLER_WORDS)
    seen: dict[str, str] = {}
    for arch in vocabulary:
        words = [arch.product, *arch.attributes, *arch.values]
        if len(set(words)) != len(words):
            raise ValidationError(f"archetype {arch.product!r} repeats a word")
        if len(arch.values) < 2 or not arch.attributes:
            raise ValidationError(f"archetype {arch.product!r} needs >= 1 attribute and >= 2 values")
        for w in words:
            if normalize(w) != w or " " in w:
                raise ValidationError(f"vocabulary word {w!r} must be a single lowercase token")
            if w in STOPWORDS or w in scaffold or w in fillers:
                raise ValidationError(f"vocabulary word {w!r} collides with template or filler text")
            if w in seen:
                raise ValidationError(f"word {w!r} shared by archetypes {seen[w]!r} and {arch.product!r}")
            seen[w] = arch.product


_validate_vocabulary(DEFAULT_VOCABULARY)


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_records: int = 200
    evidences_per_record: int = 24
    relevance_rate: float = REAL_WORLD_RELEVANCE
    product_vocabulary: tuple[Archetype, ...] = DEFAULT_VOCABULARY

    def __post_init__(self):
        self.product_vocabulary = tuple(self.product_vocabulary)
        if self.n_records < 0 or self.evidences_per_record < 0:
            raise ValidationError("n_records and evidences_per_record must be >= 0")
        if not 0.0 <= self.relevance_rate <= 1.0:
            raise ValidationError("relevance_rate must lie in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_json(cls, obj: Mapping) -> GeneratorConfig:
        known = {"seed", "n_records", "evidences_per_record", "relevance_rate", "product_vocabulary"}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown generator config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "product_vocabulary" in kwargs:
            kwargs["product_vocabulary"] = tuple(Archetype.from_json(a) for a in kwargs["product_vocabulary"])
        return cls(**kwargs)

    def to_json(self) -> dict:
        out = asdict(self)
        out["product_vocabulary"] = [
            {"product": a.product, "attributes": list(a.attributes), "values": list(a.values)}
            for a in self.product_vocabulary
        ]
        return out


@dataclass(frozen=True)
class MockKnobs:
    """Controls for the offline response generator."""

    grounded_fraction: float = 1.0
    cite_fraction: float = 1.0
    refusal_on_empty: bool = True
    n_sentences: int | None = None
    extra_cite_fraction: float = 0.0
    plant_invalid: bool = False

    def __post_init__(self):
        for name in ("grounded_fraction", "cite_fraction", "extra_cite_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.n_sentences is not None and self.n_sentences < 1:
            raise ValidationError("n_sentences must be >= 1")

    @classmethod
    def from_json(cls, obj: Mapping) -> MockKnobs:
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ValidationError(f"bad mock knobs: {exc}") from None


# Planted knobs mirroring the ordering of the baselines (vanilla < guided < citation grounding).
DEFAULT_KNOBS = {
    Variant.VANILLA: MockKnobs(grounded_fraction=0.85, cite_fraction=0.0, refusal_on_empty=False),
    Variant.GUIDED: MockKnobs(grounded_fraction=0.9, cite_fraction=0.0, refusal_on_empty=False),
    Variant.CITATION: MockKnobs(grounded_fraction=0.97, cite_fraction=0.85, refusal_on_empty=True,
                                extra_cite_fraction=0.3),
}


@dataclass(frozen=True)
class PlantedEntry:
    record_id: str
    variant: Variant
    counts: ResponseCounts
    refusal: bool

    def to_json(self) -> dict:
        return {"id": self.record_id, "variant": self.variant.value, "counts": self.counts.to_json(),
                "refusal": self.refusal}

    @classmethod
    def from_json(cls, obj: Mapping) -> PlantedEntry:
        return cls(obj["id"], Variant.parse(obj["variant"]), ResponseCounts.from_json(obj["counts"]),
                   bool(obj["refusal"]))


PlantedTruth = dict  # (record_id, Variant) -> PlantedEntry


@dataclass
class Corpus:
    records: list[BenchmarkRecord]
    truth: dict[tuple[str, Variant], PlantedEntry] = field(default_factory=dict)


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def _rng(seed: int, *spawn_key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def _round_half_up(fraction: float, n: int) -> int:
    return math.floor(Fraction(str(fraction)) * n + Fraction(1, 2))


def _draw_core(rng: np.random.Generator, arch: Archetype, used: set[frozenset]) -> str:
    # rejection sampling is fine: callers check that enough distinct cores exist
    while True:
        attr = arch.attributes[rng.integers(len(arch.attributes))]
        i, j = rng.choice(len(arch.values), size=2, replace=False)
        key = frozenset((arch.product, attr, arch.values[i], arch.values[j]))
        if key not in used:
            used.add(key)
            return _core(attr, arch.product, arch.values[i], arch.values[j])


def _make_evidence(rng, index, kind, core, relevant) -> Evidence:
    templates = EVIDENCE_TEMPLATES[kind]
    text = templates[rng.integers(len(templates))].format(core=core)
    return Evidence(index, kind, text, relevant)


def _generate(config: GeneratorConfig, shape: str, relevance_rate: float) -> list[BenchmarkRecord]:
    vocab = config.product_vocabulary
    _validate_vocabulary(vocab)
    if relevance_rate < 1.0 and len(vocab) < 2 and config.evidences_per_record:
        raise ValidationError("noisy corpora need at least two product archetypes")
    if any(a.n_cores < config.evidences_per_record for a in vocab):
        raise ValidationError("evidences_per_record exceeds the distinct statements an archetype can produce")
    kinds = (EvidenceKind.REVIEW, EvidenceKind.DESCRIPTION, EvidenceKind.QNA)
    n_ev = config.evidences_per_record

    # pass 1: per-record archetype, query and one uniform draw per evidence
    streams, heads = [], []
    for i in range(config.n_records):
        rng = _rng(config.seed, SHAPES[shape], i)
        a_idx = int(rng.integers(len(vocab)))
        arch = vocab[a_idx]
        if shape == "synthetic":
            query = SYNTHETIC_QUERY
        else:
            tpl = NOISY_QUERY_TEMPLATES[rng.integers(len(NOISY_QUERY_TEMPLATES))]
            query = tpl.format(attr=arch.attributes[rng.integers(len(arch.attributes))], product=arch.product)
        streams.append(rng)
        heads.append((a_idx, query, rng.random(n_ev)))

    # the round(rate * total) smallest draws are relevant: each evidence is
    # relevant with probability ~rate and the corpus rate is exact to 1/total
    total = config.n_records * n_ev
    n_relevant = _round_half_up(relevance_rate, total)
    relevant_mask = np.zeros(total, dtype=bool)
    if total:
        draws = np.concatenate([u for _, _, u in heads])
        relevant_mask[np.argsort(draws, kind="stable")[:n_relevant]] = True

    records = []
    for i, (rng, (a_idx, query, _)) in enumerate(zip(streams, heads)):
        arch = vocab[a_idx]
        used: set[frozenset] = set()
        evidences = []
        for idx in range(1, n_ev + 1):
            relevant = bool(relevant_mask[i * n_ev + idx - 1])
            if relevant:
                source = arch
            else:
                other = int(rng.integers(len(vocab) - 1))
                source = vocab[other if other < a_idx else other + 1]
            kind = EvidenceKind.REVIEW if shape == "synthetic" else kinds[rng.integers(len(kinds))]
            evidences.append(_make_evidence(rng, idx, kind, _draw_core(rng, source, used), relevant))
        records.append(BenchmarkRecord(QueryRecord(f"{shape}-{i:05d}", query, EvidenceSet(tuple(evidences)))))
    return records


def _with_responses(records, knobs_by_variant, seed) -> Corpus:
    if knobs_by_variant is None:
        return Corpus(records)
    out, truth = [], {}
    for rec in records:
        responses = {}
        for variant, knobs in knobs_by_variant.items():
            raw, entry = mock_generate_response(rec, variant, knobs, seed)
            responses[variant] = raw
            truth[(rec.id, variant)] = entry
        out.append(rec.with_responses(responses))
    return Corpus(out, truth)


def gen_synthetic(config: GeneratorConfig,
                  knobs_by_variant: Mapping[Variant, MockKnobs] | None = None) -> Corpus:
    """Ideal-retrieval corpus: fixed pros/cons query, every evidence relevant."""
    records = _generate(config, "synthetic", 1.0)
    return _with_responses(records, knobs_by_variant, config.seed)


def gen_noisy(config: GeneratorConfig,
              knobs_by_variant: Mapping[Variant, MockKnobs] | None = None) -> Corpus:
    """Noisy-retrieval corpus: each evidence is relevant with ``relevance_rate``."""
    records = _generate(config, "noisy", config.relevance_rate)
    return _with_responses(records, knobs_by_variant, config.seed)


def _markers(rng, refs: list[int]) -> str:
    if len(refs) == 1:
        return f"[{refs[0]}]"
    style = int(rng.integers(3))
    if style == 0:
        return "".join(f"[{r}]" for r in refs)
    sep = ", " if style == 1 else ","
    return "[" + sep.join(str(r) for r in refs) + "]"


def mock_generate_response(record: BenchmarkRecord, variant: Variant | str, knobs: MockKnobs,
                           seed: int = 0) -> tuple[RawResponse, PlantedEntry]:
    """Produce a response for ``record`` and the metric counts it was built to have."""
    variant = Variant.parse(variant)
    rng = _rng(seed, _stable_hash(record.id), VARIANT_CODES[variant])
    evidences = list(record.evidence_set)
    n_evidence = len(evidences)

    # unknown relevance (None) counts as possibly relevant
    relevant = [ev for ev in evidences if ev.gold_relevant is not False]
    if knobs.refusal_on_empty and not relevant:
        counts = ResponseCounts(m=1, n=1, evidence_count=n_evidence)
        return RawResponse(REFUSAL_SENTENCE, variant), PlantedEntry(record.id, variant, counts, True)

    n = knobs.n_sentences or int(rng.integers(3, 7))
    sources = relevant or evidences
    n_grounded = _round_half_up(knobs.grounded_fraction, n) if sources else 0

    # each sentence: (text, source evidence index or None)
    planned: list[tuple[str, int | None]] = []
    if n_grounded:
        picks = rng.choice(len(sources), size=n_grounded, replace=n_grounded > len(sources))
        for p in picks:
            ev = sources[int(p)]
            m = _CORE_RE.search(ev.text)
            body = m.group(1) if m else ev.text.rstrip(".")
            planned.append((body[0].upper() + body[1:], ev.index))
    for _ in range(n - n_grounded):
        words = rng.choice(len(FILLER_WORDS), size=3, replace=False)
        f1, f2, f3 = (FILLER_WORDS[int(w)] for w in words)
        planned.append((f"It is {f1} and {f2} {f3}", None))
    order = rng.permutation(n)
    planned = [planned[int(i)] for i in order]

    refs: list[list[int]] = [[] for _ in planned]
    if variant is Variant.CITATION:
        n_cite = _round_half_up(knobs.cite_fraction, n)
        grounded_pos = [i for i, (_, src) in enumerate(planned) if src is not None]
        filler_pos = [i for i, (_, src) in enumerate(planned) if src is None]
        rng.shuffle(grounded_pos)
        rng.shuffle(filler_pos)
        cited_grounded = grounded_pos[:n_cite]
        cited_filler = filler_pos[: max(0, n_cite - len(grounded_pos))] if n_evidence else []
        for i in cited_grounded:
            refs[i].append(planned[i][1])
        n_extra = _round_half_up(knobs.extra_cite_fraction, len(cited_grounded)) if n_evidence > 1 else 0
        for i in cited_grounded[:n_extra]:
            wrong = int(rng.integers(1, n_evidence))
            refs[i].append(wrong if wrong < planned[i][1] else wrong + 1)
        for i in cited_filler:
            refs[i].append(int(rng.integers(1, n_evidence + 1)))
        if knobs.plant_invalid:
            target = (cited_grounded + cited_filler + [0])[0]
            refs[target].append(n_evidence + 1 + int(rng.integers(5)))

    sentences = []
    m_ground = r = r_entail = n_cited = n_pcited = 0
    cited_valid: set[int] = set()
    for (body, src), rs in zip(planned, refs):
        if src is not None:
            m_ground += 1
        if rs:
            marker = _markers(rng, rs)
            if rng.random() < 0.7:
                sentences.append(f"{body} {marker}.")
            else:
                sentences.append(f"{body}. {marker}")
            n_cited += 1
            correct = [x == src for x in rs]
            r += len(rs)
            r_entail += sum(correct)
            n_pcited += all(correct)
            cited_valid.update(x for x in rs if 1 <= x <= n_evidence)
        else:
            sentences.append(f"{body}.")
    counts = ResponseCounts(n, m_ground, r, r_entail, n, n_cited, n_pcited, len(cited_valid), n_evidence)
    return RawResponse(" ".join(sentences), variant), PlantedEntry(record.id, variant, counts, False)


def relevance_rate(records: Iterable[BenchmarkRecord]) -> float:
    flags = [ev.gold_relevant for rec in records for ev in rec.evidence_set]
    return sum(1 for f in flags if f) / len(flags) if flags else float("nan")


def save_truth(truth: Mapping[tuple[str, Variant], PlantedEntry], path: str | Path) -> None:
    order = list(Variant)
    entries = sorted(truth.values(), key=lambda e: (e.record_id, order.index(e.variant)))
    dump_jsonl((e.to_json() for e in entries), path)


def load_truth(path: str | Path) -> dict[tuple[str, Variant], PlantedEntry]:
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entry = PlantedEntry.from_json(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"bad truth entry: {exc}", line=lineno) from None
            truth[(entry.record_id, entry.variant)] = entry
    return truth


def truth_path_for(bench_path: str | Path) -> Path:
    p = Path(bench_path)
    stem = p.name[: -len(".jsonl")] if p.name.endswith(".jsonl") else p.name
    return p.with_name(stem + ".truth.jsonl")


def compare_with_truth(reports: Iterable, truth: Mapping[tuple[str, Variant], PlantedEntry]) -> list[str]:
    """Describe every report whose counts or refusal flag differ from the planted entry."""
    problems = []
    for rep in reports:
        entry = truth.get((rep.record_id, rep.variant))
        if entry is None:
            problems.append(f"{rep.record_id}/{rep.variant.value}: no planted truth")
            continue
        if rep.counts != entry.counts:
            got, want = rep.counts.to_json(), entry.counts.to_json()
            diff = ", ".join(f"{k}={got[k]} (planted {want[k]})" for k in got if got[k] != want[k])
            problems.append(f"{rep.record_id}/{rep.variant.value}: {diff}")
        if rep.refusal != entry.refusal:
            problems.append(f"{rep.record_id}/{rep.variant.value}: refusal={rep.refusal} (planted {entry.refusal})")
    return problems
