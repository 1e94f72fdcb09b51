import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcrlab.spectrum import (
    KINDS,
    ParameterError,
    build_grouping,
    choose_truncation,
    evepd_sweep,
    find_gap_index_above,
    find_gap_index_below,
    gap_report,
    make_spectrum,
)

E1 = 1.0 / (1.0 - math.exp(-1.0))  # 1.5819767068693265


def test_exponential_values():
    spec = make_spectrum("exponential", alpha=1.0, p=3)
    assert np.allclose(spec.values, [math.exp(-1), math.exp(-2), math.exp(-3)], rtol=0, atol=1e-16)


def test_polynomial_values():
    spec = make_spectrum("polynomial", alpha=2.0, p=3)
    assert np.array_equal(spec.values, [1.0, 0.25, 1.0 / 9.0])


def test_isotropic_values():
    assert np.array_equal(make_spectrum("isotropic", p=4).values, np.ones(4))


@pytest.mark.parametrize("seed", [0, 1, 99])
def test_approx_polynomial_with_unit_constant_is_polynomial(seed):
    a = make_spectrum("approx_polynomial", alpha=2.0, p=50, c_ev=1.0, seed=seed)
    b = make_spectrum("polynomial", alpha=2.0, p=50)
    assert np.array_equal(a.values, b.values)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="exponential", alpha=0.0),
        dict(kind="polynomial", alpha=1.0),
        dict(kind="approx_polynomial", alpha=0.5),
        dict(kind="polynomial", alpha=2.0, c_ev=0.9),
        dict(kind="polynomial", alpha=2.0, p=0),
        dict(kind="cauchy", alpha=2.0),
    ],
)
def test_make_spectrum_rejects_bad_parameters(kwargs):
    with pytest.raises(ParameterError):
        make_spectrum(**kwargs)


def test_values_are_read_only():
    spec = make_spectrum("polynomial", alpha=2.0, p=5)
    with pytest.raises(ValueError):
        spec.values[0] = 3.0


def test_trace_helpers_and_record():
    spec = make_spectrum("polynomial", alpha=2.0, p=4)
    assert spec.lam(2) == 0.25
    assert spec.trace() == pytest.approx(1 + 1 / 4 + 1 / 9 + 1 / 16, rel=1e-15)
    assert spec.tail_trace(2) == pytest.approx(1 / 9 + 1 / 16, rel=1e-15)
    rec = spec.to_record()
    assert rec["kind"] == "polynomial" and rec["values"] == list(spec.values)


@given(
    alpha=st.floats(1.1, 4.0),
    c_ev=st.floats(1.0, 3.0),
    p=st.integers(1, 300),
    seed=st.integers(0, 2**32 - 1),
)
def test_approx_polynomial_envelope_and_order(alpha, c_ev, p, seed):
    spec = make_spectrum("approx_polynomial", alpha=alpha, p=p, c_ev=c_ev, seed=seed)
    j = np.arange(1, p + 1, dtype=np.float64)
    base = j**-alpha
    tol = 1e-12
    assert np.all(spec.values > 0)
    assert np.all(np.diff(spec.values) <= 0)
    assert np.all(spec.values <= c_ev * base * (1 + tol))
    assert np.all(spec.values >= base / c_ev * (1 - tol))


@given(kind=st.sampled_from(KINDS), p=st.integers(1, 200), alpha=st.floats(1.05, 3.0))
def test_spectrum_invariants(kind, p, alpha):
    spec = make_spectrum(kind, alpha=alpha, p=p, c_ev=1.5, seed=4)
    assert spec.p == p
    assert np.all(spec.values > 0)
    assert np.all(np.diff(spec.values) <= 0)


# ---- gap reports


def test_gap_report_polynomial_sum_below_at_one():
    rep = gap_report(make_spectrum("polynomial", alpha=2.0, p=10), 1)
    assert rep.defined
    assert rep.sum_below == pytest.approx(4.0 / 3.0, rel=1e-15)


@pytest.mark.parametrize("p", [10, 100, 10_000])
def test_gap_report_polynomial_sum_above_partial_sums(p):
    # sum_{k=2}^{p} 1/(k^2 - 1) telescopes to 3/4 - (2p + 1) / (2 p (p + 1))
    rep = gap_report(make_spectrum("polynomial", alpha=2.0, p=p), 1)
    closed = 0.75 - (2 * p + 1) / (2 * p * (p + 1))
    assert rep.sum_above == pytest.approx(closed, rel=1e-13)


def test_gap_report_polynomial_sum_above_limit():
    rep = gap_report(make_spectrum("polynomial", alpha=2.0, p=200_001), 1)
    assert rep.sum_above == pytest.approx(0.75, abs=1e-5)


@pytest.mark.parametrize("r", [1, 5, 17, 40])
def test_gap_report_exponential_rel_gap_is_constant(r):
    rep = gap_report(make_spectrum("exponential", alpha=1.0, p=50), r)
    assert rep.rel_gap == pytest.approx(1.5819767068693265, rel=1e-13)


def test_gap_report_zero_gap_is_flagged():
    rep = gap_report(make_spectrum("isotropic", p=5), 2)
    assert not rep.defined
    assert math.isnan(rep.sum_below) and math.isnan(rep.sum_above) and math.isnan(rep.rel_gap)


@pytest.mark.parametrize("r", [0, 5])
def test_gap_report_index_out_of_range(r):
    with pytest.raises(ParameterError):
        gap_report(make_spectrum("polynomial", alpha=2.0, p=5), r)


@given(kind=st.sampled_from(["exponential", "polynomial", "approx_polynomial"]), p=st.integers(2, 120), data=st.data())
def test_gap_quantities_at_least_one(kind, p, data):
    spec = make_spectrum(kind, alpha=2.0 if kind != "exponential" else 0.7, p=p, c_ev=1.5, seed=p)
    r = data.draw(st.integers(1, p - 1))
    rep = gap_report(spec, r)
    if rep.defined:
        assert rep.sum_below >= 1 and rep.sum_above >= 0 and rep.rel_gap >= 1
        if r < p - 1 or p > r + 1:
            assert rep.sum_above > 0


@given(alpha=st.floats(0.2, 3.0), p=st.integers(2, 150))
def test_exponential_sum_below_bound(alpha, p):
    spec = make_spectrum("exponential", alpha=alpha, p=p)
    for r in range(1, p):
        rep = gap_report(spec, r)
        assert rep.sum_below <= r / (1 - math.exp(-alpha)) * (1 + 1e-12)


# ---- gap index searches


def test_find_gap_index_below_polynomial():
    res = find_gap_index_below(make_spectrum("polynomial", alpha=2.0, p=200), 10, 0.5)
    assert res.r == 10
    assert res.window == (5, 10)
    assert res.sum_norm <= 1.0
    assert res.report.sum_below / (10 * math.log(math.e * 10)) == pytest.approx(res.sum_norm, rel=1e-15)


def test_find_gap_index_below_exponential():
    res = find_gap_index_below(make_spectrum("exponential", alpha=1.0, p=50), 8, 0.5)
    assert res.r == 8
    assert res.rel_gap_norm == pytest.approx(E1 / 8, rel=1e-13)


def test_find_gap_index_below_exhaustive():
    spec = make_spectrum("approx_polynomial", alpha=2.0, p=120, c_ev=1.5, seed=5)
    d, c1 = 40, 0.5
    res = find_gap_index_below(spec, d, c1)
    crit = []
    for r in range(20, 41):
        rep = gap_report(spec, r)
        crit.append(max(rep.sum_below / (r * math.log(math.e * r)), rep.rel_gap / r))
    assert res.r == 20 + int(np.argmin(crit))
    assert res.criterion == pytest.approx(min(crit), rel=1e-12)


def test_find_gap_index_isotropic_none():
    iso = make_spectrum("isotropic", p=40)
    assert find_gap_index_below(iso, 10, 0.5) is None
    assert find_gap_index_above(iso, 10, 2.0) is None


def test_find_gap_index_below_preconditions():
    spec = make_spectrum("polynomial", alpha=2.0, p=40)
    with pytest.raises(ParameterError):
        find_gap_index_below(spec, 1, 0.5)  # d < 1/c1
    with pytest.raises(ParameterError):
        find_gap_index_below(spec, 10, 1.0)
    with pytest.raises(ParameterError):
        find_gap_index_above(spec, 10, 1.0)


def test_find_gap_index_above_polynomial():
    spec = make_spectrum("polynomial", alpha=2.0, p=200)
    res = find_gap_index_above(spec, 5, 2.0)
    # the normalised criterion decreases along the window, so the minimiser is
    # its right end; the left end r = d already has a bounded criterion too
    assert res.window == (5, 10)
    assert res.r == 10
    rep = gap_report(spec, 5)
    crit_at_d = max((rep.sum_below + rep.sum_above) / (5 * math.log(5 * math.e)), rep.rel_gap / 5)
    assert crit_at_d < 1.5
    assert res.criterion <= crit_at_d


def test_find_gap_index_above_window_capped_at_p():
    res = find_gap_index_above(make_spectrum("polynomial", alpha=2.0, p=6), 5, 2.0)
    assert res.r == 5 and res.window == (5, 5)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_find_gap_index_above_approx_polynomial(seed):
    spec = make_spectrum("approx_polynomial", alpha=2.0, p=400, c_ev=1.5, seed=seed)
    crits = []
    for d in range(5, 80, 5):
        res = find_gap_index_above(spec, d, 2.0)
        assert res is not None
        assert d <= res.r <= 2 * d
        assert math.isfinite(res.criterion)
        crits.append(res.criterion)
    # bounded uniformly in d
    assert max(crits) < 5.0


# ---- grouping


def test_grouping_exponential_singletons():
    g = build_grouping(make_spectrum("exponential", alpha=1.0, p=20), 6, 1.0)
    assert g.breakpoints == (0, 1, 2, 3, 4, 5, 6)
    assert g.ratio_bound == 1.0


def test_grouping_isotropic_single_block():
    g = build_grouping(make_spectrum("isotropic", p=20), 6, 1.0)
    assert g.breakpoints == (0, 6)
    assert g.n_blocks == 1
    assert list(g.blocks()[0]) == [1, 2, 3, 4, 5, 6]


def test_grouping_polynomial_doubling():
    g = build_grouping(make_spectrum("polynomial", alpha=2.0, p=100), 8, 4.0)
    assert g.ratio_bound <= 4.0
    assert g.overshoot <= 2.0
    assert g.breakpoints == (0, 2, 6, 8)


def test_grouping_uncapped_overshoot():
    g = build_grouping(make_spectrum("polynomial", alpha=2.0, p=100), 8, 4.0, stop_at_d=False)
    # blocks {1,2}, {3..6}, {7..14}: lambda_7 / lambda_14 = 4
    assert g.breakpoints == (0, 2, 6, 14)
    assert g.overshoot == pytest.approx(14 / 8)


def test_grouping_preconditions():
    spec = make_spectrum("polynomial", alpha=2.0, p=10)
    with pytest.raises(ParameterError):
        build_grouping(spec, 4, 0.5)
    with pytest.raises(ParameterError):
        build_grouping(spec, 10, 2.0)


@given(
    kind=st.sampled_from(KINDS),
    p=st.integers(3, 150),
    c2=st.floats(1.0, 20.0),
    stop=st.booleans(),
    data=st.data(),
)
def test_grouping_invariants(kind, p, c2, stop, data):
    spec = make_spectrum(kind, alpha=1.0 if kind == "exponential" else 2.0, p=p, c_ev=2.0, seed=p)
    d = data.draw(st.integers(1, p - 1))
    g = build_grouping(spec, d, c2, stop_at_d=stop)
    bps = g.breakpoints
    assert bps[0] == 0 and bps[-1] >= d
    assert all(a < b for a, b in zip(bps, bps[1:]))
    covered = [j for block in g.blocks() for j in block]
    assert covered == list(range(1, bps[-1] + 1))
    for block in g.blocks():
        assert spec.lam(block.start) / spec.lam(block.stop - 1) <= c2
    assert g.ratio_bound <= c2
    assert g.overshoot == bps[-1] / d


# ---- gap-sum law and truncation


def test_evepd_sweep_polynomial_bounded():
    sweep = evepd_sweep(alpha=2.0, r_max=10_000)
    r = sweep.r.astype(np.float64)
    C = sweep.fitted_constant
    assert C < 2.0
    scale = r * np.log(np.e * r)
    assert np.all(sweep.sum_below <= C * scale)
    assert np.all(sweep.sum_above <= C * scale)
    assert sweep.top_decade_variation() < 0.2


def test_evepd_sweep_matches_direct_reports():
    sweep = evepd_sweep(alpha=2.0, r_max=50, p=400)
    spec = make_spectrum("polynomial", alpha=2.0, p=400)
    for r in (2, 17, 50):
        rep = gap_report(spec, r)
        i = r - 2
        assert sweep.sum_below[i] == pytest.approx(rep.sum_below, rel=1e-13)
        assert sweep.sum_above[i] == pytest.approx(rep.sum_above, rel=1e-13)


def test_choose_truncation():
    # e^{-p} <= 1e-6 needs p >= 14; the floor 4 d_max wins
    assert choose_truncation("exponential", 1.0, d_max=10) == 40
    assert choose_truncation("exponential", 1.0, d_max=2) == 14
    assert choose_truncation("polynomial", 2.0, d_max=21) == 256
    assert choose_truncation("polynomial", 2.0, d_max=100) == 400
    assert choose_truncation("isotropic", 0.0, d_max=5) == 20
