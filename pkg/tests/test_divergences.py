import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steinthermo import divergences as dv
from steinthermo import sdp
from steinthermo.errors import SupportError
from steinthermo.linalg import (random_state, rng_from_seed, support_projector, tensor,
                                trace_distance)
from steinthermo.suites import ordering_rows
from steinthermo.thermo import gibbs

seeds = st.integers(min_value=0, max_value=2**64 - 1)
KET0 = np.diag([1.0, 0.0])
HALF = np.eye(2) / 2
ALL = (dv.d_kl, dv.d_min_zero, dv.d_min_half, dv.d_max)


@pytest.mark.parametrize("f", ALL)
def test_equal_states_give_zero(f):
    r = random_state(3, 17)
    assert f(r, r).value == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("f, expected", [(dv.d_min_zero, np.log(2)), (dv.d_max, np.log(2)),
                                         (dv.d_kl, np.log(2)), (dv.d_min_half, np.log(2))])
def test_pure_vs_maximally_mixed(f, expected):
    assert f(KET0, HALF).value == pytest.approx(expected, abs=1e-10)


def test_commuting_closed_forms():
    p, q = np.array([0.9, 0.1]), np.array([0.5, 0.5])
    r, s = np.diag(p), np.diag(q)
    assert dv.d_kl(r, s).value == pytest.approx(0.9 * np.log(1.8) + 0.1 * np.log(0.2))
    assert dv.d_min_half(r, s).value == pytest.approx(-2 * np.log(np.sum(np.sqrt(p * q))))
    assert dv.d_max(r, s).value == pytest.approx(np.log(1.8))


@pytest.mark.parametrize("f", ALL)
@pytest.mark.parametrize("a", [0.5, 2.0])
def test_scaling_second_argument(f, a):
    r, s = random_state(3, 1), random_state(3, 2)
    assert f(r, a * s).value == pytest.approx(f(r, s).value - np.log(a), abs=1e-9)


@pytest.mark.parametrize("f", ALL)
def test_additive_under_tensor_products(f):
    r1, s1, r2, s2 = (random_state(2, k) for k in range(4))
    joint = f(tensor(r1, r2), tensor(s1, s2)).value
    assert joint == pytest.approx(f(r1, s1).value + f(r2, s2).value, abs=1e-8)


def test_d_min_zero_projector_oracle():
    r = random_state(4, 3, rank=2)
    s = gibbs(np.diag([0.0, 0.3, 0.9, 1.4]), 1.0).state
    p = support_projector(r)
    assert dv.d_min_zero(r, s).value == pytest.approx(-np.log(np.real(np.trace(p @ s))))
    assert dv.d_min_zero(random_state(4, 5), s).value == pytest.approx(0.0, abs=1e-12)


def test_d_max_matches_sdp():
    r, s = random_state(3, 8), random_state(3, 9)
    p = sdp.SdpProblem("min")
    lam = p.add_block(1)
    p.set_objective({lam: 1.0})
    p.add_matrix_constraint([(lam, s)], ">=", r)
    assert np.exp(dv.d_max(r, s).value) == pytest.approx(sdp.solve(p).value, rel=1e-7)


def test_support_error():
    with pytest.raises(SupportError):
        dv.d_kl(HALF, KET0)
    with pytest.raises(SupportError):
        dv.d_max(HALF, KET0)


@given(seeds)
def test_ordering_chain(seed):
    rng = rng_from_seed(seed)
    d = int(rng.integers(2, 6))
    r = random_state(d, rng, rank=int(rng.integers(1, d + 1)))
    s = random_state(d, rng) * float(rng.uniform(0.5, 2))
    assert all(row.passed for row in ordering_rows(r, s))


@pytest.mark.parametrize("d", [2, 3, 5])
def test_renyi_entropies(d):
    for alpha in (0, 0.5, 1, np.inf):
        assert dv.renyi_entropy(np.eye(d) / d, alpha) == pytest.approx(np.log(d))
        pure = np.zeros((d, d))
        pure[0, 0] = 1
        assert dv.renyi_entropy(pure, alpha) == pytest.approx(0.0, abs=1e-12)


def test_renyi_entropy_explicit_forms():
    r = np.diag([0.9, 0.1])
    assert dv.renyi_entropy(r, 0) == pytest.approx(np.log(2))
    assert dv.renyi_entropy(r, np.inf) == pytest.approx(-np.log(0.9))
    assert dv.renyi_entropy(r, 1) == pytest.approx(-0.9 * np.log(0.9) - 0.1 * np.log(0.1))
    with pytest.raises(ValueError):
        dv.renyi_entropy(r, 2)


@pytest.mark.parametrize("eta", [0.1, 0.5, 1.0])
def test_d_hyp_equal_states(eta):
    r = random_state(3, 4)
    res = dv.d_hyp(r, r, eta)
    assert res.value == pytest.approx(0.0, abs=1e-7)
    assert res.lower <= res.value <= res.upper


def test_d_hyp_eta_one_is_d_min_zero():
    r, s = random_state(4, 6, rank=2), random_state(4, 7)
    assert dv.d_hyp(r, s, 1.0).value == pytest.approx(dv.d_min_zero(r, s).value, abs=1e-7)


def test_d_hyp_classical():
    assert dv.d_hyp(KET0, HALF, 0.5).value == pytest.approx(np.log(2), abs=1e-9)
    assert dv.classical_d_hyp([1.0, 0.0], [0.5, 0.5], 0.5).value == pytest.approx(np.log(2))


def _lp_d_hyp(p, q, eta):
    # vertex enumeration: tests are 0/1 except for one fractional atom
    best = np.inf
    n = len(p)
    for mask in itertools.product([0, 1], repeat=n):
        m = np.array(mask, float)
        got = p @ m
        if got >= eta - 1e-15:
            best = min(best, q @ m)
        for j in np.flatnonzero(m == 0):
            if p[j] > 0 and got < eta <= got + p[j]:
                best = min(best, q @ m + q[j] * (eta - got) / p[j])
    return -np.log(best / eta)


@given(seeds, st.floats(0.05, 1.0))
def test_classical_d_hyp_vs_lp(seed, eta):
    rng = rng_from_seed(seed)
    p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    assert dv.classical_d_hyp(p, q, eta).value == pytest.approx(_lp_d_hyp(p, q, eta), abs=1e-9)
    assert dv.d_hyp(np.diag(p), np.diag(q), eta).value == pytest.approx(_lp_d_hyp(p, q, eta),
                                                                        abs=1e-7)


def test_d_hyp_bad_eta():
    with pytest.raises(ValueError):
        dv.d_hyp(HALF, HALF, 0.0)


def test_d_max_smooth_eps_zero():
    r, s = random_state(3, 10), random_state(3, 11)
    assert dv.d_max_smooth(r, s, 0.0).value == pytest.approx(dv.d_max(r, s).value, abs=1e-9)


def test_d_max_smooth_large_ball_reaches_sigma():
    r, s = random_state(3, 12), random_state(3, 13)
    eps = trace_distance(r, s) + 1e-3
    res = dv.d_max_smooth(r, s, eps)
    assert res.value <= 1e-7
    assert dv.SmoothingBall(r, eps).contains(res.witness.tau, tol=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_d_max_smooth_sandwich(seed):
    rng = rng_from_seed(seed)
    r, s = random_state(3, rng), random_state(3, rng)
    eps = 0.1
    res = dv.d_max_smooth(r, s, eps)
    assert dv.d_hyp(r, s, 2 * eps).value - np.log(2) <= res.upper + 1e-7
    assert res.lower <= dv.d_hyp(r, s, eps ** 2 / 2).value + 1e-7


def test_classical_d_max_smooth_closed_form():
    # (0.9 - l)_+ + (0.1 - l)_+ <= 0.1 gives l = 0.8
    assert dv.classical_d_max_smooth([0.9, 0.1], [0.0, 0.0], 0.1) == pytest.approx(np.log(0.8))
    res = dv.d_max_smooth(np.diag([0.9, 0.1]), np.eye(2), 0.1)
    assert res.value == pytest.approx(np.log(0.8), abs=1e-7)


def test_d_half_smooth_eps_zero_and_monotone():
    r, s = random_state(3, 14), random_state(3, 15)
    vals = [dv.d_half_smooth(r, s, e).value for e in (0.0, 0.01, 0.05, 0.1)]
    assert vals[0] == pytest.approx(dv.d_min_half(r, s).value, abs=1e-9)
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


def test_d_zero_smooth_eps_zero():
    r, s = random_state(3, 16, rank=2), random_state(3, 17)
    assert dv.d_zero_smooth(r, s, 0.0).value == pytest.approx(dv.d_min_zero(r, s).value)


def test_d_zero_smooth_subset_enumeration():
    p = np.array([0.5, 0.3, 0.2])
    brute = max(-np.log(sum(keep) / 3) for keep in itertools.product([0, 1], repeat=3)
                if p @ (1 - np.array(keep)) <= 0.25 and any(keep))
    assert brute == pytest.approx(np.log(1.5))
    res = dv.d_zero_smooth(np.diag(p), np.eye(3) / 3, 0.25)
    assert res.value == pytest.approx(brute, abs=1e-12)
    val, keep = dv.classical_d_zero_smooth(p, np.log(np.full(3, 1 / 3)), 0.25)
    assert val == pytest.approx(brute)
    assert keep.tolist() == [True, True, False]


@pytest.mark.parametrize("seed", range(5))
def test_d_zero_smooth_interval_contains_subset_value(seed):
    rng = rng_from_seed(seed)
    p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    exact, _ = dv.classical_d_zero_smooth(p, np.log(q), 0.2)
    res = dv.d_zero_smooth(np.diag(p), np.diag(q), 0.2)
    assert res.lower - 1e-9 <= exact <= res.upper + 1e-9


@pytest.mark.parametrize("rho, eps, expected", [
    (KET0, 0.0, (0.0, 0.0)),
    (np.eye(3) / 3, 0.0, (np.log(3), np.log(3))),
    (np.diag([0.9, 0.1]), 0.1, (-np.log(0.8), 0.0)),
])
def test_smooth_entropies(rho, eps, expected):
    assert dv.smooth_entropies(rho, eps) == pytest.approx(expected, abs=1e-7)
