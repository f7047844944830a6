import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import entropy

from pajama_forge.corpus_io import CorpusManifest
from pajama_forge.token_stats import (
    SubsetRule,
    TokenDistribution,
    apply_subset,
    classify_surface,
    count_corpus,
    count_documents,
    count_tokens,
    kl_divergence,
    kl_matrix,
    matrix_csv,
    top1000_union,
)
from synth import write_corpus


def dist(counts, source="s", subset=SubsetRule.ALL):
    return TokenDistribution(Counter(counts), source, subset)


def smoothed_oracle(p, q, eps):
    support = sorted(t for t in set(p) | set(q) if p.get(t, 0) or q.get(t, 0))
    pa = np.array([p.get(t, 0) + eps for t in support], dtype=float)
    qa = np.array([q.get(t, 0) + eps for t in support], dtype=float)
    return float(entropy(pa, qa))  # scipy normalizes both, natural log


def test_hand_computed_case():
    p, q = dist({"a": 3, "b": 1}), dist({"a": 1, "b": 3})
    assert abs(kl_divergence(p, q, epsilon=0) - 0.5 * math.log(3)) <= 1e-12


def test_self_divergence_zero():
    p = dist({1: 5, 2: 7, 3: 1})
    assert kl_divergence(p, p, epsilon=0) == 0.0
    assert kl_divergence(p, p) == 0.0


def test_missing_support_is_infinite_without_smoothing():
    assert kl_divergence(dist({1: 1, 2: 1}), dist({1: 1}), epsilon=0) == math.inf
    assert math.isfinite(kl_divergence(dist({1: 1, 2: 1}), dist({1: 1})))


def test_errors():
    with pytest.raises(ValueError):
        kl_divergence(dist({}), dist({}))
    with pytest.raises(ValueError):
        kl_divergence(dist({1: 1}), dist({1: 1}, subset=SubsetRule.WHITESPACE))
    with pytest.raises(ValueError):
        kl_matrix([dist({1: 1})])
    with pytest.raises(ValueError):
        kl_matrix([dist({1: 1}), dist({1: 1}, subset=SubsetRule.WHITESPACE)])
    with pytest.raises(ValueError):
        top1000_union([])


def test_matches_scipy_oracle():
    rng = random.Random(2)
    for _ in range(50):
        p = {t: rng.randint(0, 20) for t in rng.sample(range(40), 25)}
        q = {t: rng.randint(1, 20) for t in rng.sample(range(40), 25)}
        eps = rng.choice([1e-10, 1e-3, 0.5])
        if not any(p.values()):
            continue
        assert kl_divergence(dist(p), dist(q), eps) == pytest.approx(smoothed_oracle(p, q, eps), rel=1e-9, abs=1e-12)


def test_three_source_matrix_matches_oracle():
    tables = [{1: 10, 2: 5, 3: 1}, {1: 2, 2: 2, 4: 7}, {3: 9, 4: 1, 5: 3}]
    m = kl_matrix([dist(t) for t in tables])
    for i, p in enumerate(tables):
        assert m[i][i] == 0.0
        for j, q in enumerate(tables):
            if i != j:
                assert m[i][j] == pytest.approx(smoothed_oracle(p, q, 1e-10), rel=1e-9)
    assert m[0][1] != m[1][0]


def test_identical_sources_zero_matrix():
    assert kl_matrix([dist({1: 3, 2: 4}), dist({1: 3, 2: 4})]) == [[0.0, 0.0], [0.0, 0.0]]


@settings(max_examples=100)
@given(
    st.dictionaries(st.integers(0, 30), st.integers(0, 50), min_size=1),
    st.dictionaries(st.integers(0, 30), st.integers(0, 50), min_size=1),
    st.integers(1, 7),
)
def test_nonnegative_and_scale_invariant(p, q, c):
    if not any(p.values()) or not any(q.values()):
        return
    d = kl_divergence(dist(p), dist(q), epsilon=1e-6)
    assert d >= 0
    # scaling counts changes only the effective smoothing weight; use eps=0 for exactness
    if set(k for k, v in p.items() if v) <= set(k for k, v in q.items() if v):
        exact = kl_divergence(dist(p), dist(q), epsilon=0)
        scaled = kl_divergence(dist({t: v * c for t, v in p.items()}), dist(q), epsilon=0)
        assert scaled == pytest.approx(exact, rel=1e-9, abs=1e-12)


def test_surface_classification(gpt2):
    the = gpt2.encode(" the")[0]
    assert SubsetRule.LETTERS_ONLY in classify_surface(gpt2.surface(the))
    nn = gpt2.vocab["ĊĊ"]
    tab = gpt2.vocab["ĉ"]
    assert gpt2.surface(nn) == "\n\n" and SubsetRule.WHITESPACE in classify_surface("\n\n")
    assert SubsetRule.WHITESPACE in classify_surface(gpt2.surface(tab))
    assert SubsetRule.NON_ALPHANUMERIC in classify_surface("====")
    assert classify_surface("==a") == set()
    assert SubsetRule.NUMERIC_OPS in classify_surface("30")
    assert SubsetRule.NUMERIC_OPS in classify_surface("+")
    assert SubsetRule.NUMERIC_OPS in classify_surface(" =")
    assert SubsetRule.WHITESPACE in classify_surface(" ")
    assert classify_surface("a1") == set()


def test_partial_utf8_tokens_get_no_class(gpt2):
    # a lone continuation byte decodes to nothing
    token_id = gpt2.vocab[bytes_to_symbol(gpt2, 0x80)]
    assert gpt2.surface(token_id) is None
    d = dist({token_id: 4, gpt2.encode(" the")[0]: 1})
    assert list(apply_subset(d, SubsetRule.NON_ALPHANUMERIC, gpt2).counts) == []


def bytes_to_symbol(model, b):
    return model.byte_encoder[b]


def test_apply_subset_counts_bounded(gpt2):
    text = "The year 2023 saw 30 + 12 = 42 models.\n\n\tdef f(): return x ==== y"
    d = count_documents([doc for doc in _docs([("C4", text)])], gpt2)["C4"]
    for rule in SubsetRule:
        sub = apply_subset(d, rule, gpt2, [d])
        assert sub.subset is rule
        for t, c in sub.counts.items():
            assert c <= d.counts[t]
    letters = apply_subset(d, SubsetRule.LETTERS_ONLY, gpt2)
    assert gpt2.encode(" year")[0] in letters.counts


def test_top1000_union_tiebreak():
    a = dist({t: 1 for t in range(1500)})
    b = dist({5000: 7})
    union = top1000_union([a, b])
    assert union == set(range(1000)) | {5000}


def _docs(pairs):
    from pajama_forge.corpus_io import Document

    return [Document.create(i, s, t) for i, (s, t) in enumerate(pairs)]


def test_count_toy_and_linearity(toy_model, tmp_path):
    assert count_documents(_docs([("x", "ab")]), toy_model)["x"].counts == Counter({2: 1})
    once = count_documents(_docs([("x", "abba"), ("y", "ba")]), toy_model)
    twice = count_documents(_docs([("x", "abba"), ("y", "ba")] * 2), toy_model)
    for s in once:
        assert twice[s].counts == Counter({t: 2 * c for t, c in once[s].counts.items()})


def test_corpus_counts_match_recount(gpt2, tmp_path):
    rng = random.Random(8)
    words = ["alpha", "beta", "1234", " ", "\n", "+", "naïve", "日本"]
    docs = [(rng.choice(["A", "B", "C"]), " ".join(rng.choices(words, k=rng.randint(1, 40)))) for _ in range(100)]
    manifest = CorpusManifest.load(write_corpus(tmp_path / "in", docs, shards=3))
    got = count_corpus(manifest, gpt2, workers=2)
    oracle = {}
    for s, t in docs:
        oracle.setdefault(s, Counter()).update(gpt2.encode(t))
    assert {s: d.counts for s, d in got.items()} == oracle
    assert count_tokens(manifest, gpt2, "B").counts == oracle["B"]
    assert count_tokens(manifest, gpt2, "missing").total == 0


def test_json_round_trip():
    d = dist({3: 1, 1: 2}, "C4", SubsetRule.WHITESPACE)
    back = TokenDistribution.from_json(d.to_json())
    assert back == d and d.to_json()["total"] == 3


def test_matrix_csv_format():
    text = matrix_csv(["A", "B"], [[0.0, 0.5], [0.25, 0.0]])
    assert text == "source,A,B\nA,0.0,0.5\nB,0.25,0.0\n"
