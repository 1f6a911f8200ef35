import numpy as np
import pytest

from tarq.errors import DimMismatch, EmptyBatch
from tarq.stats import (
    GroupedMoments,
    TaggedActivations,
    accumulate_moments,
    group_losses,
    mixture_decompose,
    rare_mass_share,
    rarebal_metric,
)

from conftest import random_spd


def moments(hc, ht):
    n = hc.shape[0]
    return GroupedMoments(np.asarray(hc, float), np.asarray(ht, float), np.zeros((n, n)), 1, 1)


def random_batch(rng, n=50, d=5, p=0.3):
    x_fp = rng.standard_normal((n, d))
    x_q = x_fp + 0.1 * rng.standard_normal((n, d))
    return TaggedActivations.from_arrays(x_fp, x_q, rng.random(n) < p)


def test_single_common_position():
    x = np.array([[1.0, 2.0, -1.0]])
    m = accumulate_moments(TaggedActivations.from_arrays(x))
    assert np.array_equal(m.h_common, np.outer(x[0], x[0]))
    assert not m.h_tail.any() and not m.h_delta.any()
    assert (m.n_common, m.n_tail) == (1, 0)


def test_accumulate_matches_naive_sum(rng):
    b = random_batch(rng)
    m = accumulate_moments(b)
    hc, ht, hd = np.zeros((5, 5)), np.zeros((5, 5)), np.zeros((5, 5))
    for xf, xq, t in zip(b.x_fp, b.x_q, b.tail):
        if t:
            ht += np.outer(xq, xq)
        else:
            hc += np.outer(xq, xq)
        hd += np.outer(xf - xq, xq)
    for got, ref in ((m.h_common, hc), (m.h_tail, ht), (m.h_delta, hd)):
        assert np.linalg.norm(got - ref) <= 1e-12 * np.linalg.norm(ref)
    assert m.n_common + m.n_tail == 50 and m.n_tail == b.tail.sum()
    for H in (m.h_common, m.h_tail):
        assert np.array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() >= -1e-9 * np.trace(H)


def test_accumulate_errors():
    with pytest.raises(EmptyBatch):
        accumulate_moments(TaggedActivations.from_arrays(np.zeros((0, 3))))
    with pytest.raises(DimMismatch):
        TaggedActivations.from_arrays(np.zeros((2, 3)), np.zeros((2, 4)))


def test_rarebal_direct_example():
    rb = rarebal_metric(moments(np.diag([3.0, 1.0]), np.eye(2)), c=1.0, eps=0.0)
    assert rb.lam == 2.0
    assert np.array_equal(rb.h_rb, np.diag([5.0, 3.0]))


def test_rarebal_symmetric_groups(rng):
    H = random_spd(rng, 4)
    rb = rarebal_metric(moments(H, H))
    assert rb.lam == pytest.approx(1.0, rel=1e-7)
    np.testing.assert_allclose(rb.h_rb, 2 * H, rtol=1e-7)


def test_empty_tail_is_exact_neutral(rng):
    H = random_spd(rng, 6)
    rb = rarebal_metric(moments(H, np.zeros((6, 6))))
    assert np.array_equal(rb.h_rb, H)
    b = random_batch(rng, p=0.0)
    m = accumulate_moments(b)
    assert m.n_tail == 0
    assert np.array_equal(rarebal_metric(m).h_rb, m.h_common)


def test_trace_equalization(rng):
    for _ in range(200):
        hc, ht = random_spd(rng, 5), random_spd(rng, 5) * rng.uniform(0.01, 10)
        exact = rarebal_metric(moments(hc, ht), eps=0.0)
        assert np.trace(exact.lam * ht) == pytest.approx(np.trace(hc), rel=1e-12)
        rb = rarebal_metric(moments(hc, ht))
        # the gap is exactly lam * eps; the second term covers cancellation round-off
        assert abs(np.trace(rb.lam * ht) - np.trace(hc)) <= rb.eps * rb.lam + 1e-13 * np.trace(hc)
        assert np.array_equal(rb.h_rb, hc + rb.lam * ht)


def test_cost_ratio_scales_lambda(rng):
    hc, ht = random_spd(rng, 4), random_spd(rng, 4)
    base = rarebal_metric(moments(hc, ht), eps=0.0)
    for c in (0.25, 0.5, 2.0, 4.0):
        assert rarebal_metric(moments(hc, ht), c=c, eps=0.0).lam == pytest.approx(c * base.lam, rel=1e-15)


def test_tail_rescaling_leaves_metric_unchanged(rng):
    b = random_batch(rng, p=0.2)
    k = 2.0
    x = b.x_q.copy()
    x[b.tail] *= k
    m1 = accumulate_moments(b)
    m2 = accumulate_moments(TaggedActivations.from_arrays(x, x, b.tail))
    r1, r2 = rarebal_metric(m1, eps=0.0), rarebal_metric(m2, eps=0.0)
    assert r2.lam == r1.lam / k**2
    assert np.array_equal(r2.lam * m2.h_tail, r1.lam * m1.h_tail)
    assert np.array_equal(r2.h_rb, r1.h_rb)


def test_group_losses_cases(rng):
    m = accumulate_moments(random_batch(rng))
    assert group_losses(np.zeros((3, 5)), m) == (0.0, 0.0)
    m0 = accumulate_moments(random_batch(rng, p=0.0))
    assert group_losses(rng.standard_normal((3, 5)), m0).tail == 0.0


def test_group_losses_per_position_oracle(rng):
    b = random_batch(rng)
    dW = rng.standard_normal((3, 5))
    common, tail = group_losses(dW, accumulate_moments(b))
    per = [np.sum((dW @ x) ** 2) for x in b.x_q]
    assert common == pytest.approx(sum(v for v, t in zip(per, b.tail) if not t), rel=1e-9)
    assert tail == pytest.approx(sum(v for v, t in zip(per, b.tail) if t), rel=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0])
def test_mixture_degenerate_shares(rng, p):
    b = random_batch(rng, p=p)
    s = mixture_decompose(b, rng.standard_normal((2, 5)))
    assert s.p == p
    assert s.l_rec == pytest.approx(s.l_tail_avg if p == 1 else s.l_common_avg, rel=1e-12)


def test_mixture_identity(rng):
    for _ in range(200):
        b = random_batch(rng, n=200, p=0.07)
        s = mixture_decompose(b, rng.standard_normal((3, 5)))
        assert s.l_rec == pytest.approx((1 - s.p) * s.l_common_avg + s.p * s.l_tail_avg, rel=1e-9)


def test_rare_mass_share_cases(rng):
    H = random_spd(rng, 3)
    assert rare_mass_share(moments(H, np.zeros((3, 3)))) == 0.0
    assert rare_mass_share(moments(H, H)) == 0.5
    assert rare_mass_share(moments(np.diag([3.0, 1.0]), np.eye(2))) == pytest.approx(1 / 3)
    with pytest.raises(EmptyBatch):
        rare_mass_share(moments(np.zeros((2, 2)), np.zeros((2, 2))))
