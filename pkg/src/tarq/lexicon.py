"""Zipf scoring, rare/common tagging, and rare-biased calibration pools."""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyUtterance, FormatError, InsufficientCorpus

POOL_KINDS = ("r_top", "r_mix", "r_cross")
_PUNCT = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class FreqTable:
    entries: dict
    total: int

    def __post_init__(self):
        if self.total <= 0:
            raise ValueError("frequency table total must be positive")

    @classmethod
    def from_counts(cls, counts: dict, total: Optional[int] = None) -> "FreqTable":
        entries = {}
        for word, n in counts.items():
            key = word.lower()
            entries[key] = entries.get(key, 0) + int(n)
        return cls(entries, int(total) if total is not None else sum(entries.values()))

    def count(self, word: str) -> int:
        return self.entries.get(word.lower(), 0)


@dataclass(frozen=True)
class Utterance:
    id: str
    words: tuple


def tokenize(text: str) -> tuple:
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return tuple(text.lower().translate(_PUNCT).split())


def load_freq_table(path) -> FreqTable:
    """Read ``word<TAB>count`` lines; an optional ``#total <int>`` header
    overrides the summed total."""
    counts, total = {}, None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "total":
                total = int(parts[1])
            continue
        try:
            word, n = line.split("\t")
            n = int(n)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: expected 'word<TAB>count'") from exc
        if n < 0:
            raise FormatError(f"{path}:{lineno}: negative count")
        key = word.lower()
        counts[key] = counts.get(key, 0) + n
    return FreqTable.from_counts(counts, total)


def load_corpus(path) -> list:
    """Read an ``id<TAB>text`` manifest into utterances."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'id<TAB>text'")
        uid, text = line.split("\t", 1)
        out.append(Utterance(uid, tokenize(text)))
    return out


def zipf_score(word: str, table: FreqTable) -> Optional[float]:
    """``log10`` of occurrences per billion words; ``None`` when unseen."""
    n = table.count(word)
    if n <= 0:
        return None
    return math.log10(n / table.total * 1e9)


def tag_word(word: str, table: FreqTable, threshold: float = 3.0) -> str:
    """``"tail"`` if the score is strictly below ``threshold`` or the word is
    unseen, otherwise ``"common"``."""
    z = zipf_score(word, table)
    return "tail" if z is None or z < threshold else "common"


def rare_density(utt: Utterance, table: FreqTable, threshold: float = 3.0) -> float:
    if not utt.words:
        raise EmptyUtterance(f"utterance {utt.id!r} has no words")
    n_tail = sum(tag_word(w, table, threshold) == "tail" for w in utt.words)
    return n_tail / len(utt.words)


def _ranked(corpus: Sequence[Utterance], table: FreqTable, threshold: float) -> list:
    # stable sort keeps the lower index first on ties
    dens = [rare_density(u, table, threshold) for u in corpus]
    return sorted(range(len(corpus)), key=lambda i: -dens[i]), dens


def cross_candidates(sources: Sequence[Sequence[Utterance]], n: int, table: FreqTable,
                     threshold: float = 3.0) -> list:
    """Top ``ceil(4n/3)`` utterances by rare-density from every source.

    Returns ``(density, source_index, utterance_index)`` triples.
    """
    per_source = math.ceil(4 * n / 3)
    cands = []
    for s, corpus in enumerate(sources):
        if len(corpus) < per_source:
            raise InsufficientCorpus(f"source {s} has {len(corpus)} utterances, need {per_source}")
        order, dens = _ranked(corpus, table, threshold)
        cands.extend((dens[i], s, i) for i in order[:per_source])
    return cands


def build_pool(sources: Sequence[Sequence[Utterance]], kind: str, n: int, seed: int, table: FreqTable,
               threshold: float = 3.0) -> list:
    """Select ``n`` calibration utterances.

    ``r_top``: the ``n`` densest utterances of a single source. ``r_mix``: the
    ``ceil(n/2)`` densest plus ``floor(n/2)`` drawn uniformly (seeded) from
    the rest. ``r_cross``: the ``n`` densest among every source's
    :func:`cross_candidates`. Results are in rank order.
    """
    if kind not in POOL_KINDS:
        raise ValueError(f"unknown pool kind {kind!r}")
    if n < 1:
        raise ValueError("pool size must be positive")
    if kind == "r_cross":
        if len(sources) < 2:
            raise InsufficientCorpus("r_cross needs at least two sources")
        cands = cross_candidates(sources, n, table, threshold)
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        return [sources[s][i] for _, s, i in cands[:n]]

    if len(sources) != 1:
        raise ValueError(f"{kind} takes exactly one source")
    corpus = sources[0]
    if len(corpus) < n:
        raise InsufficientCorpus(f"corpus has {len(corpus)} utterances, need {n}")
    order, _ = _ranked(corpus, table, threshold)
    if kind == "r_top":
        return [corpus[i] for i in order[:n]]
    k_top = -(-n // 2)
    top = order[:k_top]
    rest = np.array(sorted(order[k_top:]))
    drawn = np.random.default_rng(seed).choice(rest, size=n // 2, replace=False) if n // 2 else []
    return [corpus[i] for i in top] + [corpus[int(i)] for i in drawn]
