"""Claims factory: pick linked article pairs, compose mixed context, decode
a claim, and run it through the six-rule filter chain.

Pair selection: wiki-A is uniform over the store; candidates for wiki-B are
the articles hyperlinked from wiki-A's first five sentences. A candidate is
dropped when any word of its title occurs in wiki-A's title
(case-insensitive word tokens) or when any of those anchors equals the
candidate's title exactly. The survivor must have a second sentence, since
target words are drawn from it.

Context follows the "A-head, B-lead, A-tail" layout: wiki-A sentences (those
that do not link to wiki-B), then wiki-B's first sentence, then one trailing
wiki-A sentence, trimmed from the front to the token budget, and finally the
wiki-A title as the last context element.

Filter rules, in fixed order: final dot, inclusive [30, 200] character
length, no end-of-text marker, normalized edit distance to wiki-A's first
sentence at or above the threshold, numbers/dates grounded in wiki-A, and
no out-of-vocabulary words.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sp_stats

from .bpe import END_OF_TEXT, BpeVocab, TokenSeq, decode, encode
from .corpus import Article, ArticleStore, Vocabulary, word_tokens
from .errors import PipelineError
from .generation import GenerationParams, first_sentence, generate
from .training import select_target_words, sentence_words

FILTER_RULES = (
    "no_final_dot",
    "length_bounds",
    "endoftext",
    "too_similar",
    "ungrounded_number_date",
    "oov_word",
)


@dataclass(frozen=True)
class PipelineConfig:
    min_len: int = 30
    max_len: int = 200
    similarity_threshold: float = 0.35
    context_token_budget: int = 160
    mixing: str = "a-head-b-lead-a-tail"
    seed: int = 0
    pair_retries: int = 100
    attempts_per_claim: int = 50

    def __post_init__(self) -> None:
        if not (0 < self.min_len < self.max_len):
            raise PipelineError("length bounds must satisfy 0 < min < max")
        if not (0 < self.similarity_threshold < 1):
            raise PipelineError("similarity threshold must lie in (0, 1)")
        if self.mixing != "a-head-b-lead-a-tail":
            raise PipelineError(f"unknown mixing strategy {self.mixing!r}")


@dataclass(frozen=True)
class PairSelection:
    wiki_a: Article
    wiki_b: Article
    candidate_set_size: int
    seed: int = 0


@dataclass(frozen=True)
class ContextPiece:
    """Provenance of one context element; the appended title has sentence None."""

    article_title: str
    sentence_index: int | None
    text: str


@dataclass(frozen=True)
class ComposedInput:
    pieces: tuple[ContextPiece, ...]
    context_tokens: TokenSeq
    target_words: tuple[str, ...]


@dataclass(frozen=True)
class FilterVerdict:
    rule: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ClaimCandidate:
    text: str
    pieces: tuple[ContextPiece, ...]
    target_words: tuple[str, ...]
    pair: PairSelection


def _title_words(title: str) -> set[str]:
    return {w.lower() for w in word_tokens(title)}


def select_pair(store: ArticleStore, rng: np.random.Generator, retries: int = 100, seed: int = 0) -> PairSelection:
    """Draw a (wiki-A, wiki-B) pair honoring both removal rules."""
    articles = list(store)
    for _ in range(retries):
        wiki_a = articles[int(rng.integers(0, len(articles)))]
        a_words = _title_words(wiki_a.title)
        anchors: dict[str, list[str]] = {}
        for sent in wiki_a.sentences[:5]:
            for link in sent.links:
                if link.target_title in store:
                    anchors.setdefault(link.target_title, []).append(link.anchor)
        survivors = []
        for title, anchor_list in anchors.items():
            if _title_words(title) & a_words:
                continue
            if any(anchor == title for anchor in anchor_list):
                continue
            candidate = store[title]
            if len(candidate.sentences) < 2:
                continue
            survivors.append(candidate)
        if not survivors:
            continue
        wiki_b = survivors[int(rng.integers(0, len(survivors)))]
        return PairSelection(
            wiki_a=wiki_a, wiki_b=wiki_b, candidate_set_size=len(survivors), seed=seed
        )
    raise PipelineError(f"no valid article pair found in {retries} retries")


def _links_to(sentence, title: str) -> bool:
    return any(link.target_title == title for link in sentence.links)


def compose_input(
    pair: PairSelection,
    cfg: PipelineConfig,
    rng: np.random.Generator,
    vocab: BpeVocab,
) -> ComposedInput:
    """Mixed context plus target words drawn from wiki-B's second sentence."""
    a, b = pair.wiki_a, pair.wiki_b
    eligible = [s for s in a.sentences if not _links_to(s, b.title)]
    if not eligible:
        raise PipelineError(
            f"exclusions leave no usable context for pair ({a.title!r}, {b.title!r})"
        )
    head = eligible[:-1]
    tail = [eligible[-1]]
    b_lead = [] if _links_to(b.sentences[0], b.title) else [b.sentences[0]]

    def pieces_of(h, lead, t) -> list[ContextPiece]:
        out = [ContextPiece(a.title, s.index, s.text) for s in h]
        out += [ContextPiece(b.title, s.index, s.text) for s in lead]
        out += [ContextPiece(a.title, s.index, s.text) for s in t]
        out.append(ContextPiece(a.title, None, a.title))
        return out

    def tokens_of(pieces: list[ContextPiece]) -> TokenSeq:
        return encode(" ".join(p.text for p in pieces), vocab, kind="context")

    pieces = pieces_of(head, b_lead, tail)
    tokens = tokens_of(pieces)
    while len(tokens) > cfg.context_token_budget and head:
        head.pop(0)
        pieces = pieces_of(head, b_lead, tail)
        tokens = tokens_of(pieces)
    if len(tokens) > cfg.context_token_budget and tail:
        tail = []
        pieces = pieces_of(head, b_lead, tail)
        tokens = tokens_of(pieces)
    if len(tokens) > cfg.context_token_budget and b_lead:
        b_lead = []
        pieces = pieces_of(head, b_lead, tail)
        tokens = tokens_of(pieces)

    words = sentence_words(b.sentences[1].text)
    if len(words) < 2:
        raise PipelineError(
            f"second sentence of {b.title!r} too short to draw target words from"
        )
    targets = select_target_words(words, rng)
    return ComposedInput(
        pieces=tuple(pieces), context_tokens=tokens, target_words=tuple(targets)
    )


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute edit distance."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


_MONTHS = {
    "january": "january", "february": "february", "march": "march",
    "april": "april", "may": "may", "june": "june", "july": "july",
    "august": "august", "september": "september", "october": "october",
    "november": "november", "december": "december",
    "jan": "january", "feb": "february", "mar": "march", "apr": "april",
    "jun": "june", "jul": "july", "aug": "august", "sep": "september",
    "sept": "september", "oct": "october", "nov": "november", "dec": "december",
}
_MONTH_ALT = "|".join(sorted(_MONTHS, key=len, reverse=True))
_NUMBER_RE = re.compile(r"\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+\.\d+|\d+")
_MONTH_DAY_RE = re.compile(
    rf"\b({_MONTH_ALT})\.?\s+(\d{{1,2}})(?:st|nd|rd|th)?\b", re.IGNORECASE
)
_DAY_MONTH_RE = re.compile(
    rf"\b(\d{{1,2}})(?:st|nd|rd|th)?\s+(?:of\s+)?({_MONTH_ALT})\b", re.IGNORECASE
)
_MONTH_YEAR_RE = re.compile(rf"\b({_MONTH_ALT})\.?\s+(\d{{4}})\b", re.IGNORECASE)


def _normalize_number(raw: str) -> str:
    s = raw.replace(",", "")
    if "." in s:
        return s
    return s.lstrip("0") or "0"


def extract_numbers_dates(text: str) -> frozenset[str]:
    """Normalized numbers plus month-day / month-year mentions.

    Numbers: grouping commas removed, integer leading zeros stripped,
    decimals kept verbatim. Dates: canonical "monthname day" (month first,
    either order in the text) and "monthname year" when no day intervenes.
    """
    found: set[str] = set()
    for raw in _NUMBER_RE.findall(text):
        found.add(_normalize_number(raw))
    for month, day in _MONTH_DAY_RE.findall(text):
        found.add(f"{_MONTHS[month.lower()]} {int(day)}")
    for day, month in _DAY_MONTH_RE.findall(text):
        found.add(f"{_MONTHS[month.lower()]} {int(day)}")
    for month, year in _MONTH_YEAR_RE.findall(text):
        found.add(f"{_MONTHS[month.lower()]} {year}")
    return frozenset(found)


def filter_claim(
    candidate: ClaimCandidate,
    store: ArticleStore,
    vocab: Vocabulary,
    cfg: PipelineConfig,
) -> list[FilterVerdict]:
    """Evaluate all six rules; the claim is accepted iff every rule passes."""
    claim = candidate.text
    wiki_a = store[candidate.pair.wiki_a.title]
    verdicts: list[FilterVerdict] = []

    ends_with_dot = claim.endswith(".")
    verdicts.append(FilterVerdict(
        "no_final_dot", ends_with_dot,
        "ends with a dot" if ends_with_dot else "does not end with a dot",
    ))

    in_bounds = cfg.min_len <= len(claim) <= cfg.max_len
    verdicts.append(FilterVerdict(
        "length_bounds", in_bounds,
        f"{len(claim)} chars (bounds [{cfg.min_len}, {cfg.max_len}])",
    ))

    has_eot = END_OF_TEXT in claim
    verdicts.append(FilterVerdict(
        "endoftext", not has_eot,
        "contains end-of-text marker" if has_eot else "no end-of-text marker",
    ))

    first_a = wiki_a.sentences[0].text
    distance = levenshtein(claim, first_a)
    norm = distance / max(len(claim), len(first_a), 1)
    verdicts.append(FilterVerdict(
        "too_similar", norm >= cfg.similarity_threshold,
        f"normalized distance {norm:.4f} (threshold {cfg.similarity_threshold})",
    ))

    grounding_text = " ".join([wiki_a.title] + [s.text for s in wiki_a.sentences])
    grounded = extract_numbers_dates(grounding_text)
    mentioned = extract_numbers_dates(claim)
    ungrounded = sorted(mentioned - grounded)
    verdicts.append(FilterVerdict(
        "ungrounded_number_date", not ungrounded,
        f"ungrounded: {ungrounded}" if ungrounded else "all numbers/dates grounded",
    ))

    missing = sorted({w.lower() for w in word_tokens(claim)} - vocab.words)
    verdicts.append(FilterVerdict(
        "oov_word", not missing,
        f"out-of-vocabulary: {missing}" if missing else "all words in vocabulary",
    ))
    return verdicts


@dataclass(frozen=True)
class AcceptedClaim:
    claim: str
    wiki_a: str
    wiki_b: str
    target_words: tuple[str, ...]
    pieces: tuple[ContextPiece, ...]
    verdicts: tuple[FilterVerdict, ...]
    seed: int

    def to_json(self) -> str:
        record = {
            "claim": self.claim,
            "wiki_a": self.wiki_a,
            "wiki_b": self.wiki_b,
            "target_words": list(self.target_words),
            "context_refs": [
                {"article": p.article_title, "sentence": p.sentence_index}
                for p in self.pieces
            ],
            "verdicts": [
                {"rule": v.rule, "passed": v.passed, "detail": v.detail}
                for v in self.verdicts
            ],
            "seed": self.seed,
        }
        return json.dumps(record, ensure_ascii=False, sort_keys=True)


@dataclass
class PipelineResult:
    accepted: list[AcceptedClaim] = field(default_factory=list)
    rejected_by_rule: Counter = field(default_factory=Counter)
    stats: list[tuple[int, int]] = field(default_factory=list)
    attempts: int = 0

    @property
    def rejected_count(self) -> int:
        return sum(self.rejected_by_rule.values())


def derive_seed(master_seed: int, attempt_index: int) -> int:
    """Stable per-attempt seed so parallel and serial runs agree."""
    import hashlib

    digest = hashlib.sha256(f"{master_seed}:{attempt_index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _run_attempt(store, model, bpe_vocab, vocab, cfg, gen_params, attempt_index):
    seed = derive_seed(cfg.seed, attempt_index)
    rng = np.random.default_rng(seed)
    pair = select_pair(store, rng, retries=cfg.pair_retries, seed=seed)
    composed = compose_input(pair, cfg, rng, bpe_vocab)
    target_tokens = encode(" " + " ".join(composed.target_words), bpe_vocab, kind="target")
    output = generate(
        model, composed.context_tokens, target_tokens, gen_params,
        bpe_vocab.end_of_text_id, rng=rng,
    )
    claim_text = first_sentence(decode(output, bpe_vocab))
    candidate = ClaimCandidate(
        text=claim_text,
        pieces=composed.pieces,
        target_words=composed.target_words,
        pair=pair,
    )
    verdicts = filter_claim(candidate, store, vocab, cfg)
    return seed, candidate, verdicts


def run_pipeline(
    store: ArticleStore,
    model,
    bpe_vocab: BpeVocab,
    vocab: Vocabulary,
    n_claims: int,
    cfg: PipelineConfig,
    gen_params: GenerationParams,
    jobs: int = 1,
) -> PipelineResult:
    """Generate claims until n_claims are accepted or the budget runs out.

    Attempts are self-contained (per-attempt seed derived from the master
    seed and the attempt index) and merged in index order, so any jobs
    count produces the same result as a serial run.
    """
    result = PipelineResult()
    if n_claims == 0:
        return result
    budget = cfg.attempts_per_claim * n_claims
    next_index = 0
    while len(result.accepted) < n_claims and next_index < budget:
        wave = list(range(next_index, min(next_index + max(1, jobs), budget)))
        next_index = wave[-1] + 1
        if jobs > 1 and len(wave) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(
                    lambda i: _run_attempt(store, model, bpe_vocab, vocab, cfg, gen_params, i),
                    wave,
                ))
        else:
            outcomes = [
                _run_attempt(store, model, bpe_vocab, vocab, cfg, gen_params, i)
                for i in wave
            ]
        for seed, candidate, verdicts in outcomes:
            if len(result.accepted) >= n_claims:
                break
            result.attempts += 1
            result.stats.append(
                (len(candidate.target_words), len(sentence_words(candidate.text)))
            )
            failed = [v for v in verdicts if not v.passed]
            if failed:
                result.rejected_by_rule[failed[0].rule] += 1
            else:
                result.accepted.append(AcceptedClaim(
                    claim=candidate.text,
                    wiki_a=candidate.pair.wiki_a.title,
                    wiki_b=candidate.pair.wiki_b.title,
                    target_words=candidate.target_words,
                    pieces=candidate.pieces,
                    verdicts=tuple(verdicts),
                    seed=seed,
                ))
    if len(result.accepted) < n_claims:
        raise PipelineError(
            f"attempt budget exhausted: accepted {len(result.accepted)} of "
            f"{n_claims} claims in {result.attempts} attempts"
        )
    return result


def write_claims(result: PipelineResult, path: str | Path) -> None:
    lines = [claim.to_json() for claim in result.accepted]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_stats(result: PipelineResult, path: str | Path) -> None:
    lines = ["target_count,sentence_word_len"]
    lines += [f"{tc},{wl}" for tc, wl in result.stats]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ClaimStats:
    histogram: dict[int, int]
    mean_length: dict[int, float]
    spearman: float


def claim_stats(pairs: list[tuple[int, int]]) -> ClaimStats:
    """Histogram of target counts, mean sentence length per count, Spearman."""
    if not pairs:
        raise PipelineError("claim_stats needs at least one record")
    histogram: Counter = Counter(tc for tc, _ in pairs)
    totals: Counter = Counter()
    for tc, wl in pairs:
        totals[tc] += wl
    mean_length = {tc: totals[tc] / histogram[tc] for tc in histogram}
    xs = [tc for tc, _ in pairs]
    ys = [wl for _, wl in pairs]
    if len(pairs) < 2 or len(set(xs)) < 2 or len(set(ys)) < 2:
        rho = float("nan")
    else:
        rho = float(sp_stats.spearmanr(xs, ys).statistic)
    return ClaimStats(
        histogram=dict(sorted(histogram.items())),
        mean_length={k: mean_length[k] for k in sorted(mean_length)},
        spearman=rho,
    )
