import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gem.bpe import (
    END_OF_TEXT,
    BpeVocab,
    TokenSeq,
    decode,
    encode,
    load_vocab,
    save_vocab,
    train_bpe,
)
from gem.corpus import ArticleStore
from gem.errors import TokenizerError

from conftest import make_article


def store_of(*texts):
    return ArticleStore([make_article(f"T{i}", [t]) for i, t in enumerate(texts)])


class TestTrain:
    def test_single_pair_corpus(self):
        vocab = train_bpe(store_of("aaaa"), 258)
        assert len(vocab.merges) == 1
        left, right, new = vocab.merges[0]
        assert vocab.token_bytes[left] == b"a"
        assert vocab.token_bytes[right] == b"a"
        assert vocab.token_bytes[new] == b"aa"

    def test_abab_compresses(self):
        vocab = train_bpe(store_of("abab abab"), 262)
        assert len(encode("abab", vocab)) <= 2

    def test_end_of_text_reserved_once(self, tiny_bpe):
        eot = END_OF_TEXT.encode("utf-8")
        assert tiny_bpe.token_bytes.count(eot) == 1
        assert tiny_bpe.token_bytes[tiny_bpe.end_of_text_id] == eot
        # never produced by merging
        assert all(tiny_bpe.token_bytes[new] != eot for _, _, new in tiny_bpe.merges)

    def test_vocab_size_reached(self, tiny_bpe):
        assert len(tiny_bpe) == 300
        assert not tiny_bpe.truncated

    def test_truncated_when_corpus_too_small(self):
        vocab = train_bpe(store_of("ab"), 400)
        assert vocab.truncated
        assert len(vocab) < 400

    def test_vocab_size_precondition(self):
        with pytest.raises(TokenizerError):
            train_bpe(store_of("abc"), 257)

    def test_merge_parts_are_tokens(self, tiny_bpe):
        ids = set(range(len(tiny_bpe)))
        for left, right, new in tiny_bpe.merges:
            assert left in ids and right in ids and new in ids
            assert (
                tiny_bpe.token_bytes[new]
                == tiny_bpe.token_bytes[left] + tiny_bpe.token_bytes[right]
            )

    def test_bijection(self, tiny_bpe):
        assert len(set(tiny_bpe.token_bytes)) == len(tiny_bpe.token_bytes)

    def test_determinism_byte_identical(self, tmp_path):
        texts = ("The mill guards the river.", "The tower faces the canal.")
        v1 = train_bpe(store_of(*texts), 290)
        v2 = train_bpe(store_of(*texts), 290)
        p1, p2 = tmp_path / "v1", tmp_path / "v2"
        save_vocab(v1, p1)
        save_vocab(v2, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestRoundTrip:
    def test_empty(self, tiny_bpe):
        assert encode("", tiny_bpe).ids == ()
        assert decode([], tiny_bpe) == ""

    def test_single_merge_token(self):
        vocab = train_bpe(store_of("aaaa"), 258)
        seq = encode("aa", vocab)
        assert len(seq) == 1
        assert decode(seq, vocab) == "aa"

    @pytest.mark.parametrize(
        "text",
        [
            "The quiet mill guards the copper garden.",
            "unicode: Ánh Quang Łączka über straße",
            "  spaced   out\ttabs\nnewlines  ",
            "<|endoftext|> literal marker",
            "punctuation!?! (parens) [brackets] 12,345.67",
        ],
    )
    def test_fixtures(self, tiny_bpe, text):
        seq = encode(text, tiny_bpe)
        assert decode(seq, tiny_bpe) == text
        assert encode(decode(seq, tiny_bpe), tiny_bpe).ids == seq.ids

    def test_thousand_corpus_substrings(self, tiny_bpe):
        corpus = (
            "The quiet mill guards the copper garden beside the river. "
            "The ancient tower faces the silver market near the canal. "
            "Dr. Smith arrived. He left early."
        ) * 4
        import random

        rng = random.Random(0)
        for _ in range(1000):
            i = rng.randrange(len(corpus))
            j = rng.randrange(i, min(len(corpus), i + 40) + 1)
            s = corpus[i:j]
            seq = encode(s, tiny_bpe)
            assert decode(seq, tiny_bpe) == s
            assert encode(decode(seq, tiny_bpe), tiny_bpe).ids == seq.ids

    @given(st.text(max_size=60))
    @settings(max_examples=150)
    def test_any_string_round_trips(self, tiny_bpe, text):
        assert decode(encode(text, tiny_bpe), tiny_bpe) == text

    def test_unknown_id_rejected(self, tiny_bpe):
        with pytest.raises(TokenizerError, match="unknown token id"):
            decode([len(tiny_bpe) + 5], tiny_bpe)

    def test_encode_is_per_string(self, tiny_bpe):
        # prefix stability: surrounding text cannot change an encoding
        a = encode("the mill", tiny_bpe).ids
        b = encode("the mill", tiny_bpe).ids
        assert a == b


class TestSerialization:
    def test_save_load_round_trip(self, tiny_bpe, tmp_path):
        path = tmp_path / "vocab.bpe"
        save_vocab(tiny_bpe, path)
        loaded = load_vocab(path)
        assert loaded.token_bytes == tiny_bpe.token_bytes
        assert loaded.merges == tiny_bpe.merges
        assert loaded.truncated == tiny_bpe.truncated
        text = "The mill guards the garden."
        assert encode(text, loaded).ids == encode(text, tiny_bpe).ids

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.bpe"
        path.write_text("NOTBPE\n", encoding="utf-8")
        with pytest.raises(TokenizerError, match="header"):
            load_vocab(path)

    def test_format_shape(self, tiny_bpe, tmp_path):
        path = tmp_path / "vocab.bpe"
        save_vocab(tiny_bpe, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "GEMBPE v1"
        assert lines[1] == f"merges {len(tiny_bpe.merges)}"
        merge_line = lines[2]
        left_hex, right_hex = merge_line.split("\t")
        bytes.fromhex(left_hex), bytes.fromhex(right_hex)
        assert f"tokens {len(tiny_bpe)}" in lines
        assert lines[-1] == "endoftext 256"


class TestTokenSeq:
    def test_kind_validated(self):
        with pytest.raises(TokenizerError):
            TokenSeq(ids=(1, 2), kind="bogus")

    def test_kinds(self, tiny_bpe):
        assert encode("x", tiny_bpe, kind="context").kind == "context"
        assert encode("x", tiny_bpe, kind="target").kind == "target"
        assert encode("x", tiny_bpe).kind == "present"
