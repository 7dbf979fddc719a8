import collections
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovkv.compression import (
    BudgetError,
    allocate_budgets,
    compress_layer,
    diversity_scores,
    hybrid_scores,
    largest_remainder,
)
from ovkv.core import LayerCache

from oracles import brute_force_keep, kept_indices, random_cache


def cache_of(frames, slots, protection, kv_dim=2):
    n = len(frames)
    return LayerCache(
        0, kv_dim, 1,
        keys=np.zeros((n, kv_dim), np.float32), values=np.zeros((n, kv_dim), np.float32),
        frames=np.asarray(frames, np.int64), slots=np.asarray(slots, np.int64),
        protection=np.asarray(protection, np.int64), new_start=n,
    )


def dot_cosine_diversity(keys):
    n = len(keys)
    c = [sum(k[j] for k in keys) / n for j in range(len(keys[0]))]
    cn = math.sqrt(sum(x * x for x in c))
    out = []
    for k in keys:
        kn = math.sqrt(sum(x * x for x in k))
        out.append(1 - sum(a * b for a, b in zip(k, c)) / (kn * cn))
    return out


def test_identical_keys_have_zero_diversity():
    np.testing.assert_allclose(diversity_scores(np.tile([1.0, 2.0, -1.0], (5, 1))), 0.0, atol=1e-15)


def test_orthogonal_pair():
    d = diversity_scores(np.eye(2))
    np.testing.assert_allclose(d, [0.29289321881345254] * 2, rtol=1e-12)
    np.testing.assert_allclose(d, dot_cosine_diversity([[1.0, 0.0], [0.0, 1.0]]), rtol=1e-12)


def test_opposite_key_exceeds_one():
    d = diversity_scores(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]))
    assert d[2] > 1
    np.testing.assert_allclose(d, [0.0, 0.0, 2.0], atol=1e-15)


def test_diversity_matches_dot_product_oracle(rng):
    keys = rng.normal(size=(12, 6))
    np.testing.assert_allclose(diversity_scores(keys), dot_cosine_diversity(keys.tolist()), rtol=1e-10)


def test_zero_norm_keys_counted():
    counter = collections.Counter()
    d = diversity_scores(np.array([[0.0, 0.0], [1.0, 1.0]]), counter)
    assert d[0] == 0.0 and counter["zero_norm"] == 1
    counter.clear()
    d = diversity_scores(np.array([[1.0, 0.0], [-1.0, 0.0]]), counter)
    assert (d == 0).all() and counter["zero_norm"] == 2


def test_hybrid_example():
    hs = hybrid_scores([0.1, 0.3], [5.0, 1.0, 3.0], 0.5)
    np.testing.assert_allclose(hs.scores, [0.0, 0.5, 0.5, 0.0, 0.25], atol=1e-15)
    assert hs.is_new.tolist() == [False, False, True, True, True]
    assert hs.hist_range == (0.1, 0.3) and hs.new_range == (1.0, 5.0)


def test_hybrid_beta_extremes(rng):
    hist, new = rng.uniform(size=4), rng.uniform(size=5)
    one = hybrid_scores(hist, new, 1.0)
    assert not one.scores[:4].any()
    assert np.argsort(one.scores[4:]).tolist() == np.argsort(new).tolist()
    zero = hybrid_scores(hist, new, 0.0)
    assert not zero.scores[4:].any()
    assert np.argsort(zero.scores[:4]).tolist() == np.argsort(hist).tolist()


def test_degenerate_source_maps_to_half():
    hs = hybrid_scores([2.0, 2.0], [1.0, 3.0], 0.5)
    np.testing.assert_allclose(hs.scores, [0.25, 0.25, 0.0, 0.5])


def test_allocation_examples():
    assert allocate_budgets(30, [1, 1], [10, 10]).tolist() == [15, 15]
    assert allocate_budgets(30, [3, 1], [10, 10]).tolist() == [18, 12]
    assert allocate_budgets(21, [0, 0, 0], [5, 5, 5]).tolist() == [7, 7, 7]


def test_allocation_deficit_reported():
    with pytest.raises(BudgetError) as info:
        allocate_budgets(25, [1, 1], [10, 20])
    assert info.value.deficit == 5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.integers(1, 50)), min_size=1, max_size=8), st.integers(0, 500))
def test_allocation_sums_and_floors(layers, extra):
    div = [d for d, _ in layers]
    floors = [f for _, f in layers]
    out = allocate_budgets(sum(floors) + extra, div, floors)
    assert out.sum() == sum(floors) + extra
    assert (out >= np.array(floors)).all()


def test_largest_remainder_tie_goes_low():
    assert largest_remainder([0.5, 0.5, 1.0], 2).tolist() == [1, 0, 1]


def test_compress_unchanged_when_fits():
    c = cache_of([0, 0, 1], [0, 1, 0], [0, 0, 0])
    assert compress_layer(c, np.array([0.1, 0.2, 0.3]), 3) is c


def test_compress_example_keeps_top_three():
    c = cache_of([0] * 6, range(6), [0] * 6)
    out = compress_layer(c, np.array([0.9, 0.1, 0.8, 0.8, 0.2, 0.5]), 3)
    assert kept_indices(c, out) == {0, 2, 3}


def test_compress_tie_break_prefers_newer_then_lower_slot():
    c = cache_of([0, 1, 1, 2], [5, 3, 1, 9], [0] * 4)
    out = compress_layer(c, np.array([0.5] * 4), 2)
    assert out.token_ids() == [(1, 1), (2, 9)]


def test_compress_with_protection_keeps_argmax():
    c = cache_of([0, 0, 1, 1, 1, 1], [0, 1, 0, 1, 2, 3], [-1, 2, 0, 0, 0, 0])
    scores = np.array([0.3, 0.7, 0.6, 0.1])
    out = compress_layer(c, scores, 3)
    candidates = []
    for choice in itertools.combinations(range(4), 1):
        candidates.append((sum(scores[list(choice)]), choice))
    best = max(candidates)[1][0]
    assert kept_indices(c, out) == {0, 1, 2 + best}


def test_compress_rejects_budget_below_protected():
    c = cache_of([0, 0, 0], [0, 1, 2], [-1, -1, 0])
    with pytest.raises(BudgetError):
        compress_layer(c, np.array([0.5]), 1)


def test_compress_rejects_misaligned_scores():
    c = cache_of([0, 0, 0], [0, 1, 2], [-1, 0, 0])
    with pytest.raises(ValueError):
        compress_layer(c, np.array([0.5, 0.1, 0.2]), 2)


def test_oracle_equivalence_small_sample(rng):
    for _ in range(200):
        n = int(rng.integers(1, 40))
        c = random_cache(rng, n)
        free = int((c.protection == 0).sum())
        scores = rng.integers(0, 4, free) / 4.0
        budget = int(rng.integers(c.num_protected, n + 2))
        out = compress_layer(c, scores, budget)
        assert kept_indices(c, out) == brute_force_keep(c.frames, c.slots, c.protection, scores, budget)
        assert len(out) == min(n, budget)
        assert out.token_ids() == sorted(out.token_ids())


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_protection_and_exact_budget(seed, n):
    r = np.random.default_rng(seed)
    c = random_cache(r, n, p_protect=0.3)
    scores = r.uniform(size=int((c.protection == 0).sum()))
    budget = int(r.integers(c.num_protected, n + 1))
    out = compress_layer(c, scores, budget)
    assert len(out) == min(n, budget)
    prot_before = {fs for fs, p in zip(c.token_ids(), c.protection) if p}
    assert prot_before <= set(out.token_ids())


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 30), st.floats(0, 1))
def test_raising_a_score_never_evicts_a_survivor(seed, n, bump):
    r = np.random.default_rng(seed)
    c = random_cache(r, n, p_protect=0.0)
    scores = r.integers(0, 5, n) / 5.0
    budget = int(r.integers(1, n))
    kept = kept_indices(c, compress_layer(c, scores, budget))
    for i in kept:
        raised = scores.copy()
        raised[i] += bump
        assert i in kept_indices(c, compress_layer(c, raised, budget))


def test_compress_is_deterministic(rng):
    c = random_cache(rng, 50)
    scores = rng.integers(0, 3, int((c.protection == 0).sum())) / 3.0
    outs = {tuple(compress_layer(c, scores, 30).token_ids()) for _ in range(5)}
    assert len(outs) == 1
