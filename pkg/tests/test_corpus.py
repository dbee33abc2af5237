import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gem.corpus import (
    ArticleStore,
    build_vocabulary,
    ingest_corpus,
    save_corpus,
    split_sentences,
    word_tokens,
)
from gem.errors import CorpusError

from conftest import make_article, write_corpus_file


def minimal_record():
    return {
        "title": "Solo",
        "sentences": ["Solo links to Other here.", "A second sentence."],
        "links": [{"sentence": 0, "anchor": "Other", "target": "Other"}],
    }


class TestIngest:
    def test_minimal_record(self, tmp_path):
        path = write_corpus_file(tmp_path / "c.jsonl", [minimal_record()])
        store = ingest_corpus(path)
        assert len(store) == 1
        art = store["Solo"]
        assert [s.index for s in art.sentences] == [0, 1]
        assert art.sentences[0].links[0].anchor == "Other"
        assert art.sentences[0].links[0].target_title == "Other"

    def test_duplicate_title_rejected(self, tmp_path):
        rec = {"title": "X", "sentences": ["Some text here."], "links": []}
        path = write_corpus_file(tmp_path / "c.jsonl", [rec, rec])
        with pytest.raises(CorpusError, match="duplicate"):
            ingest_corpus(path)

    def test_three_article_links_resolve(self, tmp_path, three_article_store):
        path = tmp_path / "three.jsonl"
        save_corpus(three_article_store, path)
        store = ingest_corpus(path)
        targets = [l.target_title for l in store["Alpha"].sentences[0].links]
        assert targets == ["Beta", "Gamma"]
        for t in targets:
            assert t in store

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(minimal_record()) + "\n{broken\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="line 2"):
            ingest_corpus(path)

    def test_unknown_field_rejected(self, tmp_path):
        rec = minimal_record()
        rec["extra"] = 1
        path = write_corpus_file(tmp_path / "c.jsonl", [rec])
        with pytest.raises(CorpusError, match="unknown field"):
            ingest_corpus(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(CorpusError, match="no records"):
            ingest_corpus(path)

    def test_anchor_must_occur_in_sentence(self, tmp_path):
        rec = minimal_record()
        rec["links"][0]["anchor"] = "Missing"
        path = write_corpus_file(tmp_path / "c.jsonl", [rec])
        with pytest.raises(CorpusError, match="anchor"):
            ingest_corpus(path)

    def test_link_index_out_of_range(self, tmp_path):
        rec = minimal_record()
        rec["links"][0]["sentence"] = 9
        path = write_corpus_file(tmp_path / "c.jsonl", [rec])
        with pytest.raises(CorpusError, match="out of range"):
            ingest_corpus(path)

    def test_round_trip(self, tmp_path, three_article_store):
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        save_corpus(three_article_store, p1)
        store = ingest_corpus(p1)
        save_corpus(store, p2)
        assert ingest_corpus(p2) == store
        assert p1.read_bytes() == p2.read_bytes()

    def test_anchor_substring_invariant_holds_for_all(self, three_article_store):
        for article in three_article_store:
            for sent in article.sentences:
                for link in sent.links:
                    assert link.anchor in sent.text


class TestSplitSentences:
    def test_two_terminated(self):
        assert split_sentences("A. B.") == ["A.", "B."]

    def test_abbreviation_not_split(self):
        assert split_sentences("Dr. Smith arrived. He left.") == [
            "Dr. Smith arrived.",
            "He left.",
        ]

    def test_empty(self):
        assert split_sentences("") == []

    def test_question_and_exclamation(self):
        assert split_sentences("Is it? Yes! Done.") == ["Is it?", "Yes!", "Done."]

    def test_no_split_before_lowercase(self):
        assert split_sentences("approx. value is 3.") == ["approx. value is 3."]

    def test_digit_starts_sentence(self):
        assert split_sentences("It ended. 1900 was next.") == ["It ended.", "1900 was next."]

    def test_whitespace_normalized(self):
        assert split_sentences("A  b.\nC d.") == ["A b.", "C d."]

    @given(st.text(alphabet="aB .!?\n\t", max_size=80))
    @settings(max_examples=200)
    def test_concatenation_property(self, text):
        parts = split_sentences(text)
        assert all(parts), "no empty sentences"
        assert " ".join(parts) == " ".join(text.split())


class TestVocabulary:
    def test_simple_extraction(self):
        store = ArticleStore([make_article("A", ["Cats sleep."])])
        vocab = build_vocabulary(store)
        assert vocab.words == frozenset({"cats", "sleep"})

    def test_internal_apostrophe_hyphen(self):
        store = ArticleStore([make_article("A", ["O'Neill-based"])])
        vocab = build_vocabulary(store)
        assert vocab.words == frozenset({"o'neill-based"})

    def test_membership(self):
        store = ArticleStore([make_article("A", ["Cats sleep."])])
        vocab = build_vocabulary(store)
        assert "cats" in vocab
        assert "Cats" in vocab
        assert "dogs" not in vocab

    def test_digits_excluded(self):
        store = ArticleStore([make_article("A", ["Born 1967 in x2 village."])])
        vocab = build_vocabulary(store)
        assert vocab.words == frozenset({"born", "in", "x", "village"})

    def test_order_independent_and_idempotent(self, three_article_store):
        arts = list(three_article_store)
        v1 = build_vocabulary(ArticleStore(arts))
        v2 = build_vocabulary(ArticleStore(list(reversed(arts))))
        assert v1.words == v2.words
        # closure: re-extracting words of the vocabulary itself adds nothing new
        again = {
            w.lower()
            for word in v1.words
            for w in word_tokens(word)
        }
        assert again <= v1.words


class TestWordTokens:
    def test_basic(self):
        assert word_tokens("The U.S. grew 4% in 1999") == ["The", "U", "S", "grew", "in"]

    def test_unicode_letters(self):
        assert word_tokens("Ánh Quang Łączka") == ["Ánh", "Quang", "Łączka"]
