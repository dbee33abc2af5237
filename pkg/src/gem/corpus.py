"""Hyperlinked article corpus: ingestion, sentence splitting, word vocabulary.

The corpus file format is line-delimited JSON, one article per line:

    {"title": "...", "sentences": ["...", ...],
     "links": [{"sentence": 0, "anchor": "...", "target": "..."}, ...]}

Unknown fields are rejected. Every link anchor must occur verbatim in the
text of the sentence it is attached to.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import CorpusError

_RECORD_FIELDS = frozenset({"title", "sentences", "links"})
_LINK_FIELDS = frozenset({"sentence", "anchor", "target"})

_TERMINATORS = frozenset(".!?")

# Dot-final tokens that do not terminate a sentence.
_ABBREVIATIONS = frozenset({
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "Gen.", "Rep.", "Sen.", "St.",
    "Jr.", "Sr.", "Mt.", "Ft.", "U.S.", "U.K.", "U.N.", "D.C.", "a.m.",
    "p.m.", "e.g.", "i.e.", "etc.", "vs.", "cf.", "ca.", "No.", "Inc.",
    "Ltd.", "Co.", "Corp.", "Fig.", "Vol.", "Ed.", "approx.",
})

# A word is a maximal run of letters, allowing internal apostrophes and
# hyphens. Digits are never part of a word.
_WORD_RE = re.compile(r"[^\W\d_]+(?:['\-][^\W\d_]+)*")

WORD_RULE_ID = "letter-runs+internal-apostrophe-hyphen,lowercased,v1"


@dataclass(frozen=True)
class Link:
    """A hyperlink inside a sentence, pointing at another article by title."""

    anchor: str
    target_title: str

    def __post_init__(self) -> None:
        if not self.anchor:
            raise CorpusError("link anchor must be non-empty")
        if not self.target_title:
            raise CorpusError("link target title must be non-empty")


@dataclass(frozen=True)
class Sentence:
    """One sentence of an article, with its 0-based position and links."""

    index: int
    text: str
    links: tuple[Link, ...] = ()

    def __post_init__(self) -> None:
        if self.index < 0:
            raise CorpusError("sentence index must be >= 0")
        if not self.text.strip():
            raise CorpusError("sentence text must be non-empty")


@dataclass(frozen=True)
class Article:
    title: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self) -> None:
        if not self.title:
            raise CorpusError("article title must be non-empty")
        if not self.sentences:
            raise CorpusError(f"article {self.title!r} has no sentences")
        for want, sent in enumerate(self.sentences):
            if sent.index != want:
                raise CorpusError(
                    f"article {self.title!r}: sentence indices not contiguous from 0"
                )


class ArticleStore:
    """Immutable title -> Article mapping with sorted, reproducible iteration."""

    def __init__(self, articles: Iterable[Article]):
        by_title: dict[str, Article] = {}
        for art in articles:
            if art.title in by_title:
                raise CorpusError(f"duplicate article title: {art.title!r}")
            by_title[art.title] = art
        if not by_title:
            raise CorpusError("corpus is empty")
        self._by_title = dict(sorted(by_title.items()))

    def __len__(self) -> int:
        return len(self._by_title)

    def __iter__(self) -> Iterator[Article]:
        return iter(self._by_title.values())

    def __contains__(self, title: str) -> bool:
        return title in self._by_title

    def __getitem__(self, title: str) -> Article:
        try:
            return self._by_title[title]
        except KeyError:
            raise CorpusError(f"no article titled {title!r}") from None

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ArticleStore) and self._by_title == other._by_title

    def titles(self) -> list[str]:
        return list(self._by_title)


def _parse_link(obj: object, n_sentences: int, sentences: list[str], lineno: int) -> tuple[int, Link]:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: link must be an object")
    extra = set(obj) - _LINK_FIELDS
    if extra:
        raise CorpusError(f"line {lineno}: unknown link field(s) {sorted(extra)}")
    missing = _LINK_FIELDS - set(obj)
    if missing:
        raise CorpusError(f"line {lineno}: link missing field(s) {sorted(missing)}")
    idx, anchor, target = obj["sentence"], obj["anchor"], obj["target"]
    if not isinstance(idx, int) or isinstance(idx, bool):
        raise CorpusError(f"line {lineno}: link sentence index must be an integer")
    if not (0 <= idx < n_sentences):
        raise CorpusError(f"line {lineno}: link sentence index {idx} out of range")
    if not isinstance(anchor, str) or not isinstance(target, str):
        raise CorpusError(f"line {lineno}: link anchor and target must be strings")
    if not anchor or not target:
        raise CorpusError(f"line {lineno}: link anchor and target must be non-empty")
    if anchor not in sentences[idx]:
        raise CorpusError(
            f"line {lineno}: anchor {anchor!r} does not occur in sentence {idx}"
        )
    return idx, Link(anchor=anchor, target_title=target)


def _parse_record(obj: object, lineno: int) -> Article:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: record must be a JSON object")
    extra = set(obj) - _RECORD_FIELDS
    if extra:
        raise CorpusError(f"line {lineno}: unknown field(s) {sorted(extra)}")
    missing = _RECORD_FIELDS - set(obj)
    if missing:
        raise CorpusError(f"line {lineno}: missing field(s) {sorted(missing)}")
    title, sentences, links = obj["title"], obj["sentences"], obj["links"]
    if not isinstance(title, str) or not title:
        raise CorpusError(f"line {lineno}: title must be a non-empty string")
    if not isinstance(sentences, list) or not sentences:
        raise CorpusError(f"line {lineno}: sentences must be a non-empty array")
    for s in sentences:
        if not isinstance(s, str) or not s.strip():
            raise CorpusError(f"line {lineno}: sentences must be non-empty strings")
    if not isinstance(links, list):
        raise CorpusError(f"line {lineno}: links must be an array")
    per_sentence: dict[int, list[Link]] = {}
    for raw in links:
        idx, link = _parse_link(raw, len(sentences), sentences, lineno)
        per_sentence.setdefault(idx, []).append(link)
    try:
        return Article(
            title=title,
            sentences=tuple(
                Sentence(index=i, text=text, links=tuple(per_sentence.get(i, ())))
                for i, text in enumerate(sentences)
            ),
        )
    except CorpusError as exc:
        raise CorpusError(f"line {lineno}: {exc}") from None


def ingest_corpus(path: str | Path) -> ArticleStore:
    """Read a line-delimited JSON corpus file into an ArticleStore."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    articles: list[Article] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid JSON: {exc.msg}") from None
        article = _parse_record(obj, lineno)
        if article.title in seen:
            raise CorpusError(
                f"line {lineno}: duplicate article title {article.title!r} "
                f"(first seen on line {seen[article.title]})"
            )
        seen[article.title] = lineno
        articles.append(article)
    if not articles:
        raise CorpusError(f"corpus file {path} contains no records")
    return ArticleStore(articles)


def save_corpus(store: ArticleStore, path: str | Path) -> None:
    """Write a store back to the line-delimited corpus format (title order)."""
    lines = []
    for article in store:
        record = {
            "title": article.title,
            "sentences": [s.text for s in article.sentences],
            "links": [
                {"sentence": s.index, "anchor": link.anchor, "target": link.target_title}
                for s in article.sentences
                for link in s.links
            ],
        }
        lines.append(json.dumps(record, ensure_ascii=False, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _trailing_token(text: str, end: int) -> str:
    """The non-space run of text ending at index end, inclusive."""
    start = text.rfind(" ", 0, end)
    return text[start + 1 : end + 1]


def split_sentences(text: str) -> list[str]:
    """Split text into sentences with a deterministic rule.

    A sentence ends at `.`, `!` or `?` when followed by whitespace and an
    uppercase letter or digit, unless the dot belongs to a known
    abbreviation. Whitespace is normalized to single spaces first, so
    joining the result with single spaces reproduces the normalized input.
    """
    normalized = " ".join(text.split())
    if not normalized:
        return []
    sentences: list[str] = []
    start = 0
    i = 0
    n = len(normalized)
    while i < n:
        if normalized[i] in _TERMINATORS:
            j = i
            while j + 1 < n and normalized[j + 1] in _TERMINATORS:
                j += 1
            follows = (
                j + 2 < n
                and normalized[j + 1] == " "
                and (normalized[j + 2].isupper() or normalized[j + 2].isdigit())
            )
            if follows:
                token = _trailing_token(normalized, j)
                if not (normalized[j] == "." and token in _ABBREVIATIONS):
                    sentences.append(normalized[start : j + 1])
                    start = j + 2
            i = j + 1
        else:
            i += 1
    if start < n:
        sentences.append(normalized[start:])
    return sentences


def word_tokens(text: str) -> list[str]:
    """All word tokens of text under the corpus word rule (original case)."""
    return _WORD_RE.findall(text)


@dataclass(frozen=True)
class Vocabulary:
    """Set of lowercase words extracted from a corpus under a fixed rule."""

    words: frozenset[str]
    rule_id: str = WORD_RULE_ID

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.words

    def __len__(self) -> int:
        return len(self.words)


def build_vocabulary(store: ArticleStore) -> Vocabulary:
    """Collect the lowercase of every word token in every sentence text."""
    if len(store) == 0:
        raise CorpusError("cannot build a vocabulary from an empty store")
    words: set[str] = set()
    for article in store:
        for sentence in article.sentences:
            words.update(w.lower() for w in word_tokens(sentence.text))
    return Vocabulary(words=frozenset(words))
