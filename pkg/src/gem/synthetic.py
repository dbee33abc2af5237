"""Templated synthetic corpora for desk-scale experiments.

Every article gets a two-word title, one lead sentence that names the
title and hyperlinks a related article (anchor shorter than the linked
title, link-target title sharing no words with the linking title), and a
run of body sentences whose content slots are drawn uniformly from fixed
word pools. Context never predicts a body sentence's content words, so a
model can only get them right by using the target input.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import Article, ArticleStore, Link, Sentence, save_corpus

TITLE_FIRST = (
    "Arden", "Briar", "Calder", "Dunmore", "Elwick", "Farrow", "Garnet",
    "Halden", "Iverly", "Juniper", "Kestrel", "Larkin", "Merrow", "Norwick",
    "Oakden", "Pellam", "Quarry", "Rowan", "Selwyn", "Thornby", "Umber",
    "Verity", "Weldon", "Yarrow", "Zephyr",
)
TITLE_SECOND = (
    "Vale", "Harbor", "Hollow", "Crossing", "Fields", "Heights", "Landing",
    "Point", "Reach", "Haven", "Gate", "Wharf", "Commons", "Rise", "Bend",
    "Shore",
)
ADJECTIVES = (
    "ancient", "quiet", "copper", "silver", "marble", "wooden", "narrow",
    "bright", "hollow", "amber", "misty", "golden", "shaded", "windy",
    "mossy", "pale",
)
NOUNS = (
    "mill", "bridge", "tower", "garden", "market", "archive", "chapel",
    "fountain", "granary", "lighthouse", "orchard", "terrace", "stable",
    "forge", "observatory", "cloister",
)
VERBS = (
    "guards", "faces", "overlooks", "borders", "shelters", "mirrors",
    "crowns", "flanks", "anchors", "skirts", "shadows", "frames",
)
PLACES = (
    "valley", "river", "plaza", "meadow", "cliffs", "lagoon", "ridge",
    "canal", "grove", "dunes", "marsh", "headland", "basin", "moor",
    "strand", "orchards",
)
REGIONS = (
    "north", "south", "east", "west", "uplands", "lowlands", "coast",
    "interior", "frontier", "hills", "plains", "delta",
)


def _title(i: int) -> str:
    # Diagonal pairing: titles are unique for i < lcm(25, 16) = 400 and any
    # two consecutive indices differ in both words, so every article can
    # link to its successor without sharing title words.
    return f"{TITLE_FIRST[i % len(TITLE_FIRST)]} {TITLE_SECOND[i % len(TITLE_SECOND)]}"


def _titles_share_words(a: str, b: str) -> bool:
    return bool({w.lower() for w in a.split()} & {w.lower() for w in b.split()})


def _body_sentence(rng: np.random.Generator) -> str:
    adj1, adj2 = (ADJECTIVES[i] for i in rng.integers(0, len(ADJECTIVES), 2))
    noun1, noun2 = (NOUNS[i] for i in rng.integers(0, len(NOUNS), 2))
    verb = VERBS[int(rng.integers(0, len(VERBS)))]
    place = PLACES[int(rng.integers(0, len(PLACES)))]
    return f"The {adj1} {noun1} {verb} the {adj2} {noun2} beside the {place}."


def make_synthetic_store(
    n_articles: int,
    sentences_per_article: int = 5,
    seed: int = 0,
) -> ArticleStore:
    if n_articles < 2:
        raise ValueError("need at least two articles to link between")
    if sentences_per_article < 3:
        raise ValueError("need at least three sentences per article")
    max_titles = len(TITLE_FIRST) * len(TITLE_SECOND)
    if n_articles > max_titles:
        raise ValueError(f"at most {max_titles} distinct titles available")
    rng = np.random.default_rng(seed)
    titles = [_title(i) for i in range(n_articles)]
    articles = []
    for i, title in enumerate(titles):
        # Link target: nearest later article whose title shares no words.
        j = (i + 1) % n_articles
        while _titles_share_words(title, titles[j]):
            j = (j + 1) % n_articles
        other = titles[j]
        anchor = other.split()[0]
        region = REGIONS[int(rng.integers(0, len(REGIONS)))]
        noun = NOUNS[int(rng.integers(0, len(NOUNS)))]
        adj = ADJECTIVES[int(rng.integers(0, len(ADJECTIVES)))]
        lead = f"{title} is a {adj} {noun} in the {region} near {anchor}."
        sentences = [
            Sentence(index=0, text=lead, links=(Link(anchor=anchor, target_title=other),))
        ]
        for k in range(1, sentences_per_article):
            sentences.append(Sentence(index=k, text=_body_sentence(rng)))
        articles.append(Article(title=title, sentences=tuple(sentences)))
    return ArticleStore(articles)


def write_synthetic_corpus(
    path: str | Path,
    n_articles: int,
    sentences_per_article: int = 5,
    seed: int = 0,
) -> ArticleStore:
    store = make_synthetic_store(n_articles, sentences_per_article, seed)
    save_corpus(store, path)
    return store
