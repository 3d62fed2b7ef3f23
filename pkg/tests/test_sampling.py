import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sgdlab.errors import ContractViolation
from sgdlab.problems import generate_dataset, GeneratorSpec, per_example_grad
from sgdlab.sampling import StreamKey, derive_stream, draw_index_block, draw_minibatch, index_counts


def test_same_key_same_stream():
    a = derive_stream(StreamKey(7, ("rep", 3, "indices"))).random(100)
    b = derive_stream(StreamKey(7, ("rep", 3, "indices"))).random(100)
    assert np.array_equal(a, b)


def test_one_label_changes_stream():
    a = derive_stream(StreamKey(7, ("rep", 3, "indices"))).random(100)
    b = derive_stream(StreamKey(7, ("rep", 4, "indices"))).random(100)
    c = derive_stream(StreamKey(8, ("rep", 3, "indices"))).random(100)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_int_and_decimal_labels_coincide_and_parse_round_trips():
    k = StreamKey(1, ("rep", 12, "family"))
    assert StreamKey.parse(1, str(k)) == k
    assert np.array_equal(derive_stream(k).random(5), derive_stream(StreamKey(1, ("rep", "12", "family"))).random(5))
    assert k.child("S") == StreamKey(1, ("rep", 12, "family", "S"))


def test_negative_seed_or_label_rejected():
    with pytest.raises(ContractViolation):
        StreamKey(-1)
    with pytest.raises(ContractViolation):
        derive_stream(StreamKey(0, ("rep", -2)))


def test_uniform_mean_within_three_sigma():
    u = derive_stream(StreamKey(0, ("uniform",))).random(100_000)
    assert abs(u.mean() - 0.5) <= 3 * math.sqrt(1 / 12 / u.size)


def test_draw_minibatch_single_point():
    d = draw_minibatch(1, 6, derive_stream(StreamKey(0)))
    assert np.array_equal(d.indices, np.zeros(6)) and d.counts.tolist() == [6]


def test_count_moments_are_binomial():
    rng = derive_stream(StreamKey(0, ("moments",)))
    counts = np.array([draw_minibatch(10, 5, rng, t).counts for t in range(20_000)])
    block = draw_index_block(rng, 10, (100_000, 5))
    c = (block == 3).sum(1)
    n, b, q = 10, 5, 0.1
    var = b * q * (1 - q)
    assert abs(c.mean() - b / n) <= 3 * math.sqrt(var / c.size)
    mu4 = var * (1 + 3 * (b - 2) * q * (1 - q))
    assert abs(c.var(ddof=1) - 0.45) <= 3 * math.sqrt((mu4 - var**2) / c.size)
    assert np.all(counts.sum(1) == 5)


def test_count_marginal_chi_square():
    block = draw_index_block(derive_stream(StreamKey(0, ("chi2",))), 10, (100_000, 5))
    c = (block == 0).sum(1)
    observed = np.bincount(c, minlength=6)
    expected = stats.binom.pmf(np.arange(6), 5, 0.1) * c.size
    # pool the sparse upper tail so every cell has a usable expectation
    obs = np.concatenate([observed[:3], [observed[3:].sum()]])
    exp = np.concatenate([expected[:3], [expected[3:].sum()]])
    assert stats.chisquare(obs, exp).pvalue > 0.001


def test_index_counts_examples():
    assert index_counts([2, 2, 0], 3).tolist() == [1, 0, 2]
    assert index_counts([], 4).tolist() == [0, 0, 0, 0]
    with pytest.raises(ContractViolation):
        index_counts([3], 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 19), max_size=50))
def test_index_counts_against_counter(idx):
    oracle = Counter(idx)
    assert index_counts(idx, 20).tolist() == [oracle.get(m, 0) for m in range(20)]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), b=st.integers(1, 12))
def test_reformulation_equivalence(seed, b):
    S, p = generate_dataset(GeneratorSpec("Logistic", 4, 9, noise_level=0.5))
    rng = derive_stream(StreamKey(seed))
    draw = draw_minibatch(S.n, b, rng)
    w = rng.normal(size=4)
    G = per_example_grad(p.kind, p.reg, w, S.X, S.y)
    index_form = G[draw.indices].sum(0) / b
    count_form = (draw.counts[:, None] * G).sum(0) / b
    assert np.abs(index_form - count_form).max() <= 1e-12
    assert draw.counts.sum() == b


def test_block_reuse_is_deterministic():
    k = StreamKey(5, ("indices",))
    assert np.array_equal(draw_index_block(derive_stream(k), 50, (10, 3, 2)),
                          draw_index_block(derive_stream(k), 50, (10, 3, 2)))
