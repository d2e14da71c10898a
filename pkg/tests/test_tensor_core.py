import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from advlab.tensor_core import as_tensor, box_clamp, sign, top_k

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_sign_examples():
    assert sign([-0.5, 0.0, 2.0]).tolist() == [-1.0, 0.0, 1.0]
    out = sign(np.zeros((2, 2)))
    assert out.shape == (2, 2) and not out.any()
    # negative zero maps to +0
    assert not np.signbit(sign([-0.0])).any()


def test_sign_matches_elementwise_scan(rng):
    t = rng.normal(size=100)
    t[::17] = 0.0
    expected = [1.0 if v > 0 else (-1.0 if v < 0 else 0.0) for v in t]
    assert sign(t).tolist() == expected


def test_sign_rejects_nonfinite():
    with pytest.raises(ValueError):
        sign([1.0, np.nan])


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_sign_idempotent(t):
    assert np.array_equal(sign(sign(t)), sign(t))


def test_box_clamp_examples():
    assert box_clamp([0.5], [0.0], [1.0]).tolist() == [0.5]
    assert box_clamp([-3.0, 3.0], [0.0, 0.0], [1.0, 1.0]).tolist() == [0.0, 1.0]


def test_box_clamp_matches_minmax_oracle(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        t = rng.normal(0, 2, n)
        a, b = rng.normal(0, 1, n), rng.normal(0, 1, n)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        expected = [min(h, max(l, v)) for v, l, h in zip(t, lo, hi)]
        assert box_clamp(t, lo, hi).tolist() == expected


def test_box_clamp_shape_mismatch():
    with pytest.raises(ValueError, match="broadcast"):
        box_clamp(np.zeros(3), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        box_clamp(np.zeros(3), np.ones(3), np.zeros(3))


@given(st.data())
def test_box_clamp_bounds_and_idempotence(data):
    n = data.draw(st.integers(1, 20))
    t = np.array(data.draw(st.lists(finite, min_size=n, max_size=n)))
    a = np.array(data.draw(st.lists(finite, min_size=n, max_size=n)))
    b = np.array(data.draw(st.lists(finite, min_size=n, max_size=n)))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    out = box_clamp(t, lo, hi)
    assert np.all(out >= lo) and np.all(out <= hi)
    assert np.array_equal(box_clamp(out, lo, hi), out)


def test_top_k_examples():
    assert top_k([0.1, 0.7, 0.2], 1) == [1]
    assert top_k([0.1, 0.7, 0.2], 3) == [1, 2, 0]
    assert top_k([0.5, 0.5], 1) == [0]


@pytest.mark.parametrize("k", [0, 4])
def test_top_k_bad_k(k):
    with pytest.raises(ValueError):
        top_k([0.1, 0.7, 0.2], k)


@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=2, max_size=12), st.data())
def test_top_k_nested_and_ordered(scores, data):
    k = data.draw(st.integers(1, len(scores) - 1))
    small, big = top_k(scores, k), top_k(scores, k + 1)
    assert set(small) <= set(big)
    vals = [scores[i] for i in big]
    assert vals == sorted(vals, reverse=True)
    # equal scores keep index order
    for a, b in zip(big, big[1:]):
        if scores[a] == scores[b]:
            assert a < b


def test_as_tensor_validates_shape():
    assert as_tensor(range(6), (2, 3)).shape == (2, 3)
    with pytest.raises(ValueError):
        as_tensor(range(5), (2, 3))
    with pytest.raises(ValueError):
        as_tensor([], (0,))
    with pytest.raises(ValueError):
        as_tensor([np.inf])
