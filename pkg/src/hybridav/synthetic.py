"""Synthetic fanfiction-like corpora for desk-scale experiments.

Topic lives in vocabulary: every fandom owns a pool of words, and a fraction
``topic_strength`` of each document's tokens comes from the pool of its
fandom. Style lives at the character level: every author has a few private
letter substitutions, a skewed preference over the shared vocabulary,
punctuation habits and a capitalization habit, all scaled by
``style_strength``. With ``style_strength=0`` all authors share one profile;
with ``topic_strength=0`` fandoms are indistinguishable.

Fandoms come in small families (think related franchises); authors mostly
write within one family, which lets author- and fandom-disjoint splits keep
most of an author's documents.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .encoder import Document
from .errors import InvalidConfig

_LETTERS = np.array(list(string.ascii_lowercase))
_VOWELS = set("aeiou")
_END_MARKS = (".", "!", "?", "...", ";")


def _make_words(rng: np.random.Generator, n: int, taken: set) -> list[str]:
    words = []
    while len(words) < n:
        length = int(rng.integers(2, 9))
        # alternate consonant / vowel-ish so words look pronounceable-ish; keeps n-gram stats varied
        chars = []
        for k in range(length):
            pool = "aeiou" if (k % 2 == 1) ^ (rng.random() < 0.2) else "bcdfghjklmnprstvwyz"
            chars.append(pool[int(rng.integers(len(pool)))])
        w = "".join(chars)
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


@dataclass
class AuthorProfile:
    subs: dict            # letter -> replacement string
    sub_rate: float
    word_weights: np.ndarray
    end_probs: np.ndarray
    comma_rate: float
    cap_rate: float


def _author_profile(rng, base_weights, style: float) -> AuthorProfile:
    letters = rng.choice(_LETTERS, size=3, replace=False)
    subs = {}
    for ch in letters:
        alt = rng.choice(_LETTERS)
        while alt == ch:
            alt = rng.choice(_LETTERS)
        subs[str(ch)] = str(ch) + str(alt) if rng.random() < 0.5 else str(alt)
    personal = base_weights * rng.lognormal(0.0, 1.5, size=base_weights.shape[0])
    personal /= personal.sum()
    weights = (1.0 - style) * base_weights + style * personal
    base_end = np.array([0.85, 0.05, 0.05, 0.03, 0.02])
    own_end = rng.dirichlet(np.full(len(_END_MARKS), 0.5))
    end_probs = (1.0 - style) * base_end + style * own_end
    return AuthorProfile(
        subs=subs,
        sub_rate=style * float(rng.uniform(0.4, 0.9)),
        word_weights=weights / weights.sum(),
        end_probs=end_probs / end_probs.sum(),
        comma_rate=(1.0 - style) * 0.08 + style * float(rng.uniform(0.0, 0.3)),
        cap_rate=(1.0 - style) * 1.0 + style * float(rng.choice([1.0, 0.9, 0.3])),
    )


def _render_word(word: str, prof: AuthorProfile, rng) -> str:
    if prof.sub_rate <= 0.0:
        return word
    out = []
    for ch in word:
        rep = prof.subs.get(ch)
        if rep is not None and rng.random() < prof.sub_rate:
            out.append(rep)
        else:
            out.append(ch)
    return "".join(out)


def _render_doc(rng, prof: AuthorProfile, common: list[str], pool: list[str],
                topic: float, n_tokens: int) -> str:
    sentences = []
    produced = 0
    while produced < n_tokens:
        length = min(int(rng.integers(5, 16)), n_tokens - produced)
        words = []
        for _ in range(length):
            if pool and rng.random() < topic:
                w = pool[int(rng.integers(len(pool)))]
            else:
                w = common[int(rng.choice(len(common), p=prof.word_weights))]
            w = _render_word(w, prof, rng)
            if rng.random() < prof.comma_rate:
                w += ","
            words.append(w)
        words[-1] = words[-1].rstrip(",")
        if rng.random() < prof.cap_rate:
            words[0] = words[0][:1].upper() + words[0][1:]
        mark = _END_MARKS[int(rng.choice(len(_END_MARKS), p=prof.end_probs))]
        sentences.append(" ".join(words) + mark)
        produced += length
    return " ".join(sentences)


def gen_synthetic(n_authors: int = 200, docs_per_author: int = 2, n_fandoms: int = 8,
                  style_strength: float = 1.0, topic_strength: float = 0.3, seed: int = 0,
                  doc_tokens: tuple[int, int] = (150, 250), family_size: int = 2,
                  same_fandom_prob: float = 0.5, cross_family_prob: float = 0.05,
                  n_common_words: int = 300, n_fandom_words: int = 40) -> list[Document]:
    """Generate a corpus of ``n_authors * docs_per_author`` documents."""
    if n_authors < 2 or n_fandoms < 2 or docs_per_author < 1:
        raise InvalidConfig("need n_authors >= 2, n_fandoms >= 2, docs_per_author >= 1")
    if not (0.0 <= style_strength <= 1.0 and 0.0 <= topic_strength <= 1.0):
        raise InvalidConfig("style_strength and topic_strength must lie in [0, 1]")
    if not (0.0 <= same_fandom_prob <= 1.0 and 0.0 <= cross_family_prob <= 1.0):
        raise InvalidConfig("probabilities must lie in [0, 1]")
    lo, hi = doc_tokens
    if lo < 1 or hi < lo:
        raise InvalidConfig(f"bad doc_tokens {doc_tokens}")
    family_size = max(1, min(family_size, n_fandoms))

    rng = np.random.default_rng(seed)
    taken: set = set()
    common = _make_words(rng, n_common_words, taken)
    ranks = np.arange(1, n_common_words + 1, dtype=float)
    base_weights = 1.0 / ranks
    base_weights /= base_weights.sum()
    pools = [_make_words(rng, n_fandom_words, taken) for _ in range(n_fandoms)]
    families = [list(range(k, min(k + family_size, n_fandoms))) for k in range(0, n_fandoms, family_size)]

    docs = []
    for a in range(n_authors):
        prof = _author_profile(rng, base_weights, style_strength)
        family = families[int(rng.integers(len(families)))]
        first = family[int(rng.integers(len(family)))]
        for k in range(docs_per_author):
            if k == 0 or rng.random() < same_fandom_prob:
                fandom = first
            elif rng.random() < cross_family_prob or len(family) == 1:
                others = [f for f in range(n_fandoms) if f != first]
                fandom = others[int(rng.integers(len(others)))]
            else:
                others = [f for f in family if f != first]
                fandom = others[int(rng.integers(len(others)))]
            n_tok = int(rng.integers(lo, hi + 1))
            text = _render_doc(rng, prof, common, pools[fandom], topic_strength, n_tok)
            docs.append(Document(f"a{a:04d}-d{k}", text, f"a{a:04d}", f"f{fandom:02d}"))
    return docs
