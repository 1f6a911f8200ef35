import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tarq.errors import EmptyUtterance, FormatError, InsufficientCorpus
from tarq.lexicon import (
    FreqTable,
    Utterance,
    build_pool,
    cross_candidates,
    load_corpus,
    load_freq_table,
    rare_density,
    tag_word,
    tokenize,
    zipf_score,
)

# total 1e9: "the" at Zipf 7, "had" at 5, "merganser" at ~2.48, "boundary" exactly 3
TABLE = FreqTable.from_counts({"the": 10**7, "had": 10**5, "merganser": 300, "boundary": 1000}, total=10**9)


def test_zipf_examples():
    assert zipf_score("boundary", TABLE) == pytest.approx(3.0, abs=1e-12)
    assert zipf_score("x", FreqTable.from_counts({"x": 1}, total=10**6)) == pytest.approx(3.0, abs=1e-12)
    assert zipf_score("unseen", TABLE) is None
    assert zipf_score("THE", TABLE) == pytest.approx(7.0)


def test_tagging():
    assert tag_word("boundary", TABLE, 3.0) == "common"
    assert tag_word("merganser", TABLE, 3.0) == "tail"
    assert tag_word("unseen", TABLE, 0.0) == "tail"
    t = FreqTable.from_counts({"w": round(10 ** 2.9)}, total=10**9)
    assert tag_word("w", t, 3.0) == "tail"


def test_rare_density():
    assert rare_density(Utterance("a", ("the", "merganser", "had")), TABLE) == pytest.approx(1 / 3)
    assert rare_density(Utterance("b", ("merganser", "zzz")), TABLE) == 1.0
    assert rare_density(Utterance("c", ("the", "had")), TABLE) == 0.0
    with pytest.raises(EmptyUtterance):
        rare_density(Utterance("d", ()), TABLE)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["the", "had", "merganser", "boundary", "oov"]), min_size=1, max_size=12),
       st.floats(0, 9), st.floats(0, 9))
def test_threshold_monotone(words, k1, k2):
    lo, hi = sorted((k1, k2))
    tail_lo = {w for w in words if tag_word(w, TABLE, lo) == "tail"}
    tail_hi = {w for w in words if tag_word(w, TABLE, hi) == "tail"}
    assert tail_lo <= tail_hi


def test_tokenize():
    assert tokenize("The Merganser, had!  it.") == ("the", "merganser", "had", "it")


def test_file_loaders(tmp_path):
    f = tmp_path / "freq.tsv"
    f.write_text("#total 1000000000\nThe\t10000000\nmerganser\t300\n\n", encoding="utf-8")
    t = load_freq_table(f)
    assert t.total == 10**9 and t.count("the") == 10**7
    f2 = tmp_path / "freq2.tsv"
    f2.write_text("a\t3\nb\t7\n", encoding="utf-8")
    assert load_freq_table(f2).total == 10
    bad = tmp_path / "bad.tsv"
    bad.write_text("a 3\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_freq_table(bad)
    c = tmp_path / "corpus.tsv"
    c.write_text("u1\tThe merganser.\nu2\thad\n", encoding="utf-8")
    corpus = load_corpus(c)
    assert [u.id for u in corpus] == ["u1", "u2"] and corpus[0].words == ("the", "merganser")
    c.write_text("no tab here\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_corpus(c)


def density_corpus(densities, prefix="u"):
    """Utterances of 10 words with the requested share of tail words."""
    out = []
    for i, r in enumerate(densities):
        k = round(r * 10)
        out.append(Utterance(f"{prefix}{i}", ("merganser",) * k + ("the",) * (10 - k)))
    return out


def test_r_top_whole_corpus():
    corpus = density_corpus([0.2, 0.9, 0.5, 0.9, 0.0])
    pool = build_pool([corpus], "r_top", 5, 0, TABLE)
    assert [u.id for u in pool] == ["u1", "u3", "u2", "u0", "u4"]


def test_r_mix_example():
    corpus = density_corpus([1.0, 0.9, 0.1, 0.0, 0.0])
    for seed in range(20):
        pool = build_pool([corpus], "r_mix", 4, seed, TABLE)
        assert [u.id for u in pool[:2]] == ["u0", "u1"]
        assert {u.id for u in pool[2:]} <= {"u2", "u3", "u4"}
        assert len({u.id for u in pool}) == 4


def test_r_mix_disjoint_and_seeded(rng):
    for trial in range(100):
        corpus = density_corpus(rng.integers(0, 11, 30) / 10)
        n = int(rng.integers(1, 31))
        a = build_pool([corpus], "r_mix", n, trial, TABLE)
        b = build_pool([corpus], "r_mix", n, trial, TABLE)
        assert a == b
        top = {u.id for u in a[: -(-n // 2)]}
        rand = {u.id for u in a[-(-n // 2):]}
        assert not top & rand and len(a) == n
    c = build_pool([corpus], "r_mix", n, 999, TABLE)
    assert c[: -(-n // 2)] == a[: -(-n // 2)]


def test_r_top_dominates_every_subset(rng):
    corpus = density_corpus(rng.integers(0, 11, 8) / 10)
    pool = build_pool([corpus], "r_top", 3, 0, TABLE)
    got = sorted((rare_density(u, TABLE) for u in pool), reverse=True)
    for sub in itertools.combinations(corpus, 3):
        other = sorted((rare_density(u, TABLE) for u in sub), reverse=True)
        assert all(g >= o for g, o in zip(got, other))


def test_r_cross_counts_and_order(rng):
    sources = [density_corpus(rng.integers(0, 11, 200) / 10, prefix=f"s{s}_") for s in range(3)]
    cands = cross_candidates(sources, 128, TABLE)
    assert len(cands) == 3 * 171
    for s in range(3):
        assert sum(c[1] == s for c in cands) == 171
    pool = build_pool(sources, "r_cross", 128, 0, TABLE)
    assert len(pool) == 128
    dens = [rare_density(u, TABLE) for u in pool]
    assert dens == sorted(dens, reverse=True)
    best = sorted((c for c in cands), key=lambda c: (-c[0], c[1], c[2]))[:128]
    assert [u.id for u in pool] == [sources[s][i].id for _, s, i in best]


def test_pool_errors():
    corpus = density_corpus([0.5] * 4)
    with pytest.raises(InsufficientCorpus):
        build_pool([corpus], "r_top", 5, 0, TABLE)
    with pytest.raises(InsufficientCorpus):
        build_pool([corpus], "r_cross", 2, 0, TABLE)
    with pytest.raises(InsufficientCorpus):
        build_pool([corpus, corpus], "r_cross", 4, 0, TABLE)
    with pytest.raises(ValueError):
        build_pool([corpus, corpus], "r_top", 2, 0, TABLE)
    with pytest.raises(ValueError):
        build_pool([corpus], "r_other", 2, 0, TABLE)
