import json

import numpy as np
import pytest

from gem.bpe import train_bpe
from gem.corpus import Article, ArticleStore, Link, Sentence, ingest_corpus
from gem.model import BaseLm, ModelConfig, extend_from_base


def make_article(title, texts, links=None):
    """links: {sentence_index: [(anchor, target_title), ...]}"""
    links = links or {}
    sentences = tuple(
        Sentence(
            index=i,
            text=t,
            links=tuple(Link(anchor=a, target_title=tt) for a, tt in links.get(i, [])),
        )
        for i, t in enumerate(texts)
    )
    return Article(title=title, sentences=sentences)


def write_corpus_file(path, records):
    path.write_text(
        "\n".join(json.dumps(r, ensure_ascii=False) for r in records) + "\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture
def three_article_store():
    a = make_article(
        "Alpha",
        ["Alpha sits beside Beta and Gamma.", "The alpha mill guards the river."],
        links={0: [("Beta", "Beta"), ("Gamma", "Gamma")]},
    )
    b = make_article("Beta", ["Beta is quiet.", "The beta tower faces the canal."])
    c = make_article("Gamma", ["Gamma is bright.", "The gamma forge mirrors the moor."])
    return ArticleStore([a, b, c])


@pytest.fixture(scope="session")
def tiny_bpe():
    texts = [
        "The quiet mill guards the copper garden beside the river.",
        "The ancient tower faces the silver market near the canal.",
        "Dr. Smith arrived. He left early. The marble bridge crowns the ridge.",
    ]
    arts = [make_article(f"T{i}", [t]) for i, t in enumerate(texts)]
    return train_bpe(ArticleStore(arts), 300)


@pytest.fixture(scope="session")
def toy_cfg():
    return ModelConfig(d_model=8, n_layers=1, n_heads=2, d_ff=16, vocab_size=32, max_positions=256)


@pytest.fixture(scope="session")
def toy_pair(toy_cfg):
    base = BaseLm(toy_cfg, seed=1)
    gem = extend_from_base(base, seed=2)
    return base, gem
