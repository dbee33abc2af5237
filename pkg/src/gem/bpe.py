"""Byte-level BPE subword tokenizer trained on an ArticleStore.

The base alphabet is all 256 byte values, so any UTF-8 string is encodable
and decode(encode(x)) == x holds exactly. One id is reserved for the
end-of-text marker; it is appended by callers and never produced by a
merge. Text is pre-chunked with the pattern ` ?\\S+|\\s+` (a word keeps one
leading space) and merges never cross chunk boundaries.

Vocab file format:

    GEMBPE v1
    merges <n>
    <left-hex>\\t<right-hex>        (n lines, token bytes hex-encoded)
    tokens <m>
    <id>\\t<token-bytes-hex>        (m lines)
    endoftext <id>
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import ArticleStore
from .errors import TokenizerError

_CHUNK_RE = re.compile(r" ?\S+|\s+")

END_OF_TEXT = "<|endoftext|>"
_N_BASE = 256  # one token per byte value

TOKEN_KINDS = ("context", "target", "present")


@dataclass(frozen=True)
class TokenSeq:
    """A sequence of token ids tagged with the model input it feeds."""

    ids: tuple[int, ...]
    kind: str = "present"

    def __post_init__(self) -> None:
        if self.kind not in TOKEN_KINDS:
            raise TokenizerError(f"unknown token kind {self.kind!r}")
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


class BpeVocab:
    """Trained merge list plus the token-bytes <-> id bijection."""

    def __init__(self, merges: list[tuple[int, int, int]], token_bytes: list[bytes], truncated: bool = False):
        self.merges = tuple(merges)            # (left_id, right_id, new_id)
        self.token_bytes = tuple(token_bytes)  # id -> bytes
        self.truncated = truncated
        self._id_of = {b: i for i, b in enumerate(self.token_bytes)}
        if len(self._id_of) != len(self.token_bytes):
            raise TokenizerError("token table is not a bijection")
        self._rank = {(l, r): (rank, new) for rank, (l, r, new) in enumerate(self.merges)}
        self._chunk_cache: dict[bytes, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return len(self.token_bytes)

    @property
    def end_of_text_id(self) -> int:
        return _N_BASE

    @property
    def end_of_text(self) -> str:
        return END_OF_TEXT

    def id_of(self, token: bytes) -> int:
        return self._id_of[token]


def _chunks(text: str) -> list[bytes]:
    return [c.encode("utf-8") for c in _CHUNK_RE.findall(text)]


def _pair_counts(seqs: Counter) -> Counter:
    counts: Counter = Counter()
    for ids, freq in seqs.items():
        for pair in zip(ids, ids[1:]):
            counts[pair] += freq
    return counts


def _merge_seq(ids: tuple[int, ...], pair: tuple[int, int], new_id: int) -> tuple[int, ...]:
    out = []
    i = 0
    while i < len(ids):
        if i + 1 < len(ids) and (ids[i], ids[i + 1]) == pair:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return tuple(out)


def train_bpe(store: ArticleStore, vocab_size: int) -> BpeVocab:
    """Learn merges from the store until the vocabulary reaches vocab_size.

    Merges are chosen by descending pair frequency; ties break on the
    lexicographically smallest (left-bytes, right-bytes). A merge whose
    product would collide with an existing token is skipped, which keeps
    the id map a bijection and the end-of-text token unreachable. If the
    corpus runs out of pairs early the vocabulary is returned smaller,
    flagged truncated.
    """
    if vocab_size <= _N_BASE + 1:
        raise TokenizerError(
            f"vocab_size must exceed {_N_BASE + 1} (base bytes + end-of-text)"
        )
    token_bytes: list[bytes] = [bytes([i]) for i in range(_N_BASE)]
    token_bytes.append(END_OF_TEXT.encode("utf-8"))  # reserved id 256
    known = set(token_bytes)

    seqs: Counter = Counter()
    for article in store:
        for sentence in article.sentences:
            for chunk in _chunks(sentence.text):
                seqs[tuple(chunk)] += 1

    merges: list[tuple[int, int, int]] = []
    truncated = False
    n_merges = vocab_size - len(token_bytes)
    for _ in range(n_merges):
        counts = _pair_counts(seqs)
        best = None
        if counts:
            top = max(counts.values())
            candidates = sorted(
                (token_bytes[l] + token_bytes[r], l, r)
                for (l, r), c in counts.items()
                if c == top
            )
            for product, l, r in candidates:
                if product not in known:
                    best = (l, r, product)
                    break
        if best is None:
            truncated = True
            break
        left, right, product = best
        new_id = len(token_bytes)
        token_bytes.append(product)
        known.add(product)
        merges.append((left, right, new_id))
        seqs = Counter({_merge_seq(ids, (left, right), new_id): f for ids, f in seqs.items()})
    return BpeVocab(merges, token_bytes, truncated=truncated)


def _encode_chunk(chunk: bytes, vocab: BpeVocab) -> tuple[int, ...]:
    cached = vocab._chunk_cache.get(chunk)
    if cached is not None:
        return cached
    ids = list(chunk)
    rank = vocab._rank
    while len(ids) >= 2:
        best_rank = None
        best_pair = None
        for pair in zip(ids, ids[1:]):
            r = rank.get(pair)
            if r is not None and (best_rank is None or r[0] < best_rank):
                best_rank = r[0]
                best_pair = pair
        if best_pair is None:
            break
        ids = list(_merge_seq(tuple(ids), best_pair, rank[best_pair][1]))
    result = tuple(ids)
    vocab._chunk_cache[chunk] = result
    return result


def encode(text: str, vocab: BpeVocab, kind: str = "present") -> TokenSeq:
    """Tokenize text. Pure: the result depends on the string alone."""
    ids: list[int] = []
    for chunk in _chunks(text):
        ids.extend(_encode_chunk(chunk, vocab))
    return TokenSeq(ids=tuple(ids), kind=kind)


def decode(tokens: TokenSeq | list[int] | tuple[int, ...], vocab: BpeVocab) -> str:
    """Inverse of encode. Unknown ids raise; stray bytes decode lossily."""
    ids = tokens.ids if isinstance(tokens, TokenSeq) else tuple(tokens)
    parts = []
    for i in ids:
        if not (0 <= i < len(vocab.token_bytes)):
            raise TokenizerError(f"unknown token id {i}")
        parts.append(vocab.token_bytes[i])
    return b"".join(parts).decode("utf-8", errors="replace")


def save_vocab(vocab: BpeVocab, path: str | Path) -> None:
    lines = ["GEMBPE v1", f"merges {len(vocab.merges)}"]
    for left, right, _ in vocab.merges:
        lines.append(
            f"{vocab.token_bytes[left].hex()}\t{vocab.token_bytes[right].hex()}"
        )
    lines.append(f"tokens {len(vocab.token_bytes)}")
    for i, b in enumerate(vocab.token_bytes):
        lines.append(f"{i}\t{b.hex()}")
    lines.append(f"endoftext {vocab.end_of_text_id}")
    if vocab.truncated:
        lines.append("truncated")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> BpeVocab:
    path = Path(path)
    if not path.exists():
        raise TokenizerError(f"vocab file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    it = iter(enumerate(lines, start=1))

    def next_line() -> tuple[int, str]:
        try:
            return next(it)
        except StopIteration:
            raise TokenizerError(f"{path}: truncated vocab file") from None

    lineno, header = next_line()
    if header != "GEMBPE v1":
        raise TokenizerError(f"{path}: bad header {header!r}")
    lineno, merges_hdr = next_line()
    if not merges_hdr.startswith("merges "):
        raise TokenizerError(f"{path} line {lineno}: expected merges section")
    n_merges = int(merges_hdr.split()[1])
    raw_merges: list[tuple[bytes, bytes]] = []
    for _ in range(n_merges):
        lineno, line = next_line()
        try:
            left_hex, right_hex = line.split("\t")
            raw_merges.append((bytes.fromhex(left_hex), bytes.fromhex(right_hex)))
        except ValueError:
            raise TokenizerError(f"{path} line {lineno}: bad merge record") from None
    lineno, tokens_hdr = next_line()
    if not tokens_hdr.startswith("tokens "):
        raise TokenizerError(f"{path} line {lineno}: expected tokens section")
    n_tokens = int(tokens_hdr.split()[1])
    token_bytes: list[bytes] = []
    for want in range(n_tokens):
        lineno, line = next_line()
        try:
            id_str, token_hex = line.split("\t")
        except ValueError:
            raise TokenizerError(f"{path} line {lineno}: bad token record") from None
        if int(id_str) != want:
            raise TokenizerError(f"{path} line {lineno}: token ids out of order")
        token_bytes.append(bytes.fromhex(token_hex))
    lineno, eot_line = next_line()
    if not eot_line.startswith("endoftext "):
        raise TokenizerError(f"{path} line {lineno}: expected endoftext record")
    truncated = any(line == "truncated" for _, line in it)
    if int(eot_line.split()[1]) != _N_BASE:
        raise TokenizerError(f"{path}: unexpected end-of-text id")
    id_of = {b: i for i, b in enumerate(token_bytes)}
    merges = []
    for left_b, right_b in raw_merges:
        try:
            merges.append((id_of[left_b], id_of[right_b], id_of[left_b + right_b]))
        except KeyError:
            raise TokenizerError(f"{path}: merge references unknown token") from None
    return BpeVocab(merges, token_bytes, truncated=truncated)
