import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steinthermo import sdp
from steinthermo.linalg import random_state, rng_from_seed


def test_value_of_trace_max():
    rho = np.diag([0.7, 0.3])
    p = sdp.SdpProblem("max")
    x = p.add_block(2)
    p.set_objective({x: rho})
    p.add_matrix_constraint([(x, 1.0)], "<=", np.eye(2))
    sol = sdp.solve(p)
    assert sol.status == "Optimal"
    assert sol.value == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(sol.primal[x], np.eye(2), atol=1e-6)


def test_max_eigenvalue_program():
    p = sdp.SdpProblem("min")
    lam = p.add_block(1)
    p.set_objective({lam: 1.0})
    p.add_matrix_constraint([(lam, np.eye(2) / 2)], ">=", np.diag([0.7, 0.3]))
    sol = sdp.solve(p)
    assert sol.status == "Optimal"
    assert sol.value == pytest.approx(1.4, abs=1e-7)


def test_scalar_bound():
    p = sdp.SdpProblem("min")
    x = p.add_block(1)
    p.set_objective({x: 1.0})
    p.add_constraint({x: 1.0}, ">=", 2.0)
    assert sdp.solve(p).value == pytest.approx(2.0, abs=1e-7)


def test_infeasible_reports_certificate():
    p = sdp.SdpProblem("min")
    x = p.add_block(1)
    p.set_objective({x: 1.0})
    p.add_constraint({x: 1.0}, "<=", -1.0)
    sol = sdp.solve(p)
    assert sol.status == "Infeasible"
    assert sol.certificate is not None


def test_unbounded():
    p = sdp.SdpProblem("max")
    x = p.add_block(1)
    p.set_objective({x: 1.0})
    p.add_constraint({x: 1.0}, ">=", 1.0)
    assert sdp.solve(p).status == "Unbounded"


def test_max_iterations_never_claims_optimality():
    p = sdp.SdpProblem("min")
    lam = p.add_block(1)
    p.set_objective({lam: 1.0})
    p.add_matrix_constraint([(lam, np.eye(3) / 3)], ">=", random_state(3, 1))
    sol = sdp.solve(p, max_iter=2)
    assert sol.status == "MaxIterations"
    assert np.isfinite(sol.residuals["primal"])


def test_dimension_cap():
    p = sdp.SdpProblem("min")
    x = p.add_block(129)
    p.set_objective({x: 1.0})
    with pytest.raises(ValueError):
        sdp.solve(p)


@pytest.mark.parametrize("bad", [lambda p, x: p.set_objective({x: np.array([[0, 1], [0, 0]])}),
                                 lambda p, x: p.add_constraint({x: 1.0}, "<", 1.0),
                                 lambda p, x: p.set_objective({x: np.eye(3)})])
def test_malformed_problems(bad):
    p = sdp.SdpProblem("min")
    x = p.add_block(2)
    with pytest.raises(ValueError):
        bad(p, x)


def _dmax_problem(r, s, scale=1.0):
    p = sdp.SdpProblem("min")
    lam = p.add_block(1)
    p.set_objective({lam: scale})
    p.add_matrix_constraint([(lam, s)], ">=", r)
    return p


@given(st.integers(0, 2**32), st.integers(2, 5))
def test_weak_duality_and_closed_form(seed, d):
    rng = rng_from_seed(seed)
    r = random_state(d, rng)
    s = 0.5 * random_state(d, rng) + 0.5 * np.eye(d) / d
    sol = sdp.solve(_dmax_problem(r, s))
    w, v = np.linalg.eigh(s)
    si = v @ np.diag(w ** -0.5) @ v.conj().T
    exact = np.linalg.eigvalsh(si @ r @ si)[-1]
    assert sol.status == "Optimal"
    assert max(sol.residuals.values()) <= 1e-8
    assert sol.gap / (1 + abs(sol.value) + abs(sol.dual_value)) >= -1e-8
    assert sol.value == pytest.approx(exact, rel=1e-6)


def test_ill_conditioned_stall_is_reported():
    # sigma has condition number ~1e3; the best iterate stops just short of 1e-8
    rng = rng_from_seed(0)
    r, s = random_state(5, rng), random_state(5, rng)
    sol = sdp.solve(_dmax_problem(r, s))
    if sol.status != "Optimal":
        assert sol.status == "MaxIterations"
        assert max(sol.residuals.values()) > 1e-8
    assert sol.value == pytest.approx(372.33, rel=1e-4)
    assert sdp.solve(_dmax_problem(r, s), tol=1e-7).status == "Optimal"


@pytest.mark.parametrize("c", [0.1, 3.0, 50.0])
def test_scale_invariance(c):
    r, s = random_state(3, 4), random_state(3, 5)
    base = sdp.solve(_dmax_problem(r, s), tol=1e-9).value
    assert sdp.solve(_dmax_problem(r, s, c), tol=1e-9).value == pytest.approx(c * base, rel=1e-8)


def test_deterministic():
    r, s = random_state(4, 8), random_state(4, 9)
    a, b = sdp.solve(_dmax_problem(r, s)), sdp.solve(_dmax_problem(r, s))
    assert a.to_json() == b.to_json()


def test_json_roundtrip():
    p = _dmax_problem(random_state(2, 1), np.eye(2) / 2)
    q = sdp.SdpProblem.from_json(p.to_json())
    assert q.to_json() == p.to_json()
    assert sdp.solve(q).value == pytest.approx(sdp.solve(p).value)
