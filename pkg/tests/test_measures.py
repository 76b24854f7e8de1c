import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sixvertex.lattice import OccupancyWindow, shift
from sixvertex.measures import (
    BernoulliProduct,
    Blocking,
    Inhomogeneous,
    LambdaKernel,
    MeasureSpec,
    QNBParams,
    QNBProduct,
    UnsupportedMeasureError,
    UnsupportedParameterError,
    an_balance,
    bernoulli_sum_law,
    blocking_tail_mass,
    boundary_current_law,
    check_inhomogeneous_balance,
    inhomogeneous_boundary_law,
    lambda_row,
    project_blocking_sampler,
    qnb_law,
    qnb_pmf,
    sample_window,
    sample_windows,
    tuples,
)
from sixvertex.qseries import ModelParams, SixVertexParams


def test_qnb_examples():
    par = QNBParams(0.5, -2.0, 2.0)
    assert qnb_pmf(par, 0) == pytest.approx(0.5, abs=1e-12)
    assert qnb_pmf(par, 1) == pytest.approx(0.5, abs=1e-12)
    for K in (1, 3, 5):
        assert qnb_pmf(QNBParams.from_K(K, -0.7, 2.0), K + 1) == 0.0


def test_qnb_rejects_non_integer_k():
    with pytest.raises(UnsupportedParameterError):
        QNBParams(0.3, -1.0, 2.0)
    with pytest.raises(UnsupportedParameterError):
        QNBParams(0.5, -1.0, 1.0)


@given(st.integers(1, 7), st.floats(0.0, 5.0), st.sampled_from([0.5, 1.5, 2.0, 3.0]))
def test_qnb_is_bernoulli_sum(n, gamma, q):
    # sum of Ber(q^(i-1) g / (1 + q^(i-1) g)), i = 1..n, against qNB(q^-n, -q^n g)
    probs = [q ** (i - 1) * gamma / (1 + q ** (i - 1) * gamma) for i in range(1, n + 1)]
    law = qnb_law(QNBParams.from_K(n, -(q**n) * gamma, q))
    assert law.sum() == pytest.approx(1.0, abs=1e-10)
    assert law.min() >= -1e-15
    np.testing.assert_allclose(law, bernoulli_sum_law(probs), atol=1e-10)


def test_bernoulli_sum_law_by_enumeration():
    probs = [0.2, 0.7, 0.4]
    want = np.zeros(4)
    for bits in tuples(3):
        want[sum(bits)] += math.prod(p if b else 1 - p for p, b in zip(probs, bits))
    np.testing.assert_allclose(bernoulli_sum_law(probs), want, atol=1e-15)


def test_lambda_examples():
    row = lambda_row(LambdaKernel(2, 2.0), 1)
    assert row[(1, 0)] == pytest.approx(1 / 3)
    assert row[(0, 1)] == pytest.approx(2 / 3)
    assert lambda_row(LambdaKernel(3, 2.0), 0)[(0, 0, 0)] == 1.0
    assert lambda_row(LambdaKernel(3, 2.0), 3)[(1, 1, 1)] == 1.0
    with pytest.raises(ValueError):
        lambda_row(LambdaKernel(2, 2.0), 3)


@given(st.integers(1, 5), st.sampled_from([0.5, 2.0, 3.0]), st.booleans(), st.data())
def test_lambda_exchange_ratio(n, q, rev, data):
    v = data.draw(st.integers(0, n))
    row = lambda_row(LambdaKernel(n, q, rev), v)
    assert sum(row.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(p == 0.0 for t, p in row.items() if sum(t) != v)
    # moving a one to the left multiplies by q^-1 in the forward kernel and by q in the reversed one
    factor = q if rev else 1 / q
    for t, p in row.items():
        for i in range(n - 1):
            if t[i] == 0 and t[i + 1] == 1 and p > 0:
                s = t[:i] + (1, 0) + t[i + 2 :]
                assert row[s] / p == pytest.approx(factor, rel=1e-10)


def test_densities():
    assert BernoulliProduct(0.3).density(7).tolist() == pytest.approx([0.7, 0.3])
    assert Blocking(2.0).density(1)[1] == pytest.approx(1 / 3)
    assert Blocking(2.0, 1).density(1)[1] == pytest.approx(1 / 2)
    inh = Inhomogeneous(0.4, 2.0, 3)
    for k in range(-3, 6):
        m = (3 - 1 - k) % 3
        assert inh.density(k)[1] == pytest.approx(0.4 * 2**m / (0.6 + 0.4 * 2**m))
    hs = QNBProduct(2.0, 2, "blocking")
    for k in (-1, 0, 2):
        np.testing.assert_allclose(hs.density(k), qnb_law(QNBParams.from_K(2, -(2.0 ** (1 - 2 * k)), 2.0)))
    hom = QNBProduct(2.0, 3, rho=0.3)
    assert hom.density(0).sum() == pytest.approx(1.0)


@pytest.mark.parametrize(
    "spec",
    [BernoulliProduct(0.25), Blocking(2.0, 3), Inhomogeneous(0.5, 0.5, 2), QNBProduct(2.0, 2, "blocking"), QNBProduct(3.0, 2, rho=0.2)],
)
def test_measure_roundtrip(spec):
    back = MeasureSpec.from_dict(spec.to_dict())
    assert back == spec
    np.testing.assert_array_equal(back.densities(-3, 6), spec.densities(-3, 6))


def test_measure_from_dict_unknown():
    with pytest.raises(UnsupportedMeasureError):
        MeasureSpec.from_dict({"kind": "uniform"})


def test_sample_window_degenerate():
    rng = np.random.default_rng(0)
    assert sample_window(BernoulliProduct(0.0), 0, 10, rng).values.sum() == 0
    assert sample_window(BernoulliProduct(1.0), 0, 10, rng).values.sum() == 10
    w = sample_window(QNBProduct(2.0, 3, rho=0.5), 4, 5, rng)
    assert w.capacity == 3 and w.offset == 4


def test_blocking_sample_density():
    rng = np.random.default_rng(1)
    N = 100_000
    w = sample_windows(Blocking(2.0), -30, 61, N, rng)
    est = w[:, 31].mean()  # site k = 1
    assert abs(est - 1 / 3) <= 3 * math.sqrt(2 / 9 / N)


def test_boundary_law_examples():
    p = SixVertexParams(2 / 3, 1 / 3)
    assert boundary_current_law(BernoulliProduct(0.5), p, 0) == pytest.approx(1 / 3)
    assert boundary_current_law(BernoulliProduct(0.0), p, 0) == 0.0
    assert boundary_current_law(Blocking(2.0), p, 1) == pytest.approx(0.5)
    with pytest.raises(UnsupportedMeasureError):
        boundary_current_law(Inhomogeneous(0.5, 2.0, 2), p, 0)


@given(st.floats(0.01, 0.99), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_boundary_law_solves_balance(rho, b1, b2):
    p = SixVertexParams(b1, b2)
    z = boundary_current_law(BernoulliProduct(rho), p, 0)
    assert (1 - b1) * rho * (1 - z) == pytest.approx(z * (1 - rho) * (1 - b2), abs=1e-12)


@pytest.mark.parametrize("params", [ModelParams(2.0, -0.05, 2, 2), ModelParams(0.5, -10.0, 3, 1), ModelParams(3.0, -0.02, 1, 3)])
def test_inhomogeneous_balance(params):
    for x in range(-3, 4):
        for t in range(4):
            assert abs(check_inhomogeneous_balance(0.35, params, x, t)) < 1e-12
    z = inhomogeneous_boundary_law(0.35, params, 0)
    assert 0 < z < 1


def test_projected_sampler_examples():
    rng = np.random.default_rng(2)
    s = project_blocking_sampler(1e6, 0, 50, rng, truncation_radius=3)
    step = (np.arange(-3, 4) <= 0).astype(int)
    assert np.all(s.windows == step)
    s = project_blocking_sampler(2.0, 1, 500, rng)
    assert np.all(an_balance(s.windows, s.offset) == 1)
    assert s.windows.shape == (500, 81)


def test_projected_sampler_rejects():
    rng = np.random.default_rng(0)
    with pytest.raises(UnsupportedParameterError):
        project_blocking_sampler(0.5, 0, 10, rng)
    with pytest.raises(UnsupportedParameterError):
        project_blocking_sampler(2.0, 0, 10, rng, truncation_radius=5)


def test_projected_sampler_shift_relation():
    # shifting a sample of class n by one site gives class n-1
    N = 10_000
    a = project_blocking_sampler(2.0, 1, N, np.random.default_rng(10))
    b = project_blocking_sampler(2.0, 0, N, np.random.default_rng(11))
    w = shift(OccupancyWindow(a.offset, a.windows[0]), 1)
    assert an_balance(w.values, w.offset) == 0
    ma, mb = a.windows.mean(axis=0), b.windows.mean(axis=0)
    for x in range(-5, 6):
        pa, pb = ma[x + 1 - a.offset], mb[x - b.offset]
        pool = (pa + pb) / 2
        assert abs(pa - pb) <= 3 * math.sqrt(pool * (1 - pool) * 2 / N) + 1e-12


def test_tail_mass():
    assert blocking_tail_mass(2.0, 10) == pytest.approx(2 * 2.0**-10)
    with pytest.raises(UnsupportedParameterError):
        blocking_tail_mass(1.0, 3)


def test_an_balance_step():
    for n in (-2, 0, 3):
        sites = np.arange(-6, 7)
        assert an_balance((sites <= n).astype(int), -6)[0] == n
