import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steinthermo import divergences as dv
from steinthermo import thermo as th
from steinthermo.errors import PreconditionError
from steinthermo.linalg import (Channel, apply_channel, pinch, random_channel, random_hermitian,
                                random_state, random_unitary, rng_from_seed, tensor)
from steinthermo.suites import gpm_rows, tm_rows

seeds = st.integers(min_value=0, max_value=2**64 - 1)
PLUS = np.full((2, 2), 0.5)


def test_trivial_thermal_state():
    g = th.gibbs(np.zeros((1, 1)), 2.0)
    assert np.allclose(g.state, [[1.0]])
    assert g.free_energy == pytest.approx(0.0)


@pytest.mark.parametrize("e, beta", [(1.0, 1.0), (0.3, 2.5), (4.0, 0.1)])
def test_qubit_gibbs_closed_form(e, beta):
    g = th.gibbs(np.diag([0.0, e]), beta)
    b = np.exp(-beta * e)
    assert np.allclose(np.diag(g.state), [1 / (1 + b), b / (1 + b)])
    assert g.log_z == pytest.approx(np.log1p(b))


def test_free_energy_additive():
    ha, hb = random_hermitian(2, 1), random_hermitian(3, 2)
    joint = np.kron(ha, np.eye(3)) + np.kron(np.eye(2), hb)
    fa, fb = th.gibbs(ha, 0.7).free_energy, th.gibbs(hb, 0.7).free_energy
    assert th.gibbs(joint, 0.7).free_energy == pytest.approx(fa + fb)


def test_gibbs_rejects_nonpositive_beta():
    with pytest.raises(ValueError):
        th.gibbs(np.eye(2), 0.0)


def test_discretize_on_grid_is_identity():
    h = np.diag([0.0, 0.5, 1.5])
    assert np.allclose(th.discretize(h, 0.5).binned, h)


def test_discretize_floor_clamping():
    hb = th.discretize(np.diag([0.0, 0.4, 1.1]), 0.5)
    assert np.allclose(hb.energies, [0.0, 0.5, 1.0])
    assert np.allclose(np.sort(np.linalg.eigvalsh(hb.binned)), [0.0, 0.0, 1.0])
    assert hb.m == 3 and hb.occupied == 2


@given(seeds, st.floats(0.05, 1.0))
def test_discretize_error_at_most_delta(seed, delta):
    h = random_hermitian(4, seed)
    hb = th.discretize(h, delta)
    w = np.linalg.eigvalsh(h - hb.binned)
    assert w[0] >= -1e-12 and w[-1] <= delta + 1e-12


def test_coherence_modes():
    hb = th.discretize(np.diag([0.0, 0.5]), 0.5)
    norms = th.mode_norms(th.coherence_modes(np.diag([0.3, 0.7]), hb))
    assert {k for k, v in norms.items() if v > 1e-14} == {0}
    modes = th.coherence_modes(PLUS, hb)
    assert set(modes) == {-1, 0, 1}
    assert np.allclose(modes[0], np.eye(2) / 2)
    assert np.allclose(sum(modes.values()), PLUS)


def test_mode_norms_match_block_stacks():
    hb = th.discretize(np.diag([0.0, 0.0, 1.0, 2.0]), 1.0)
    r = random_state(4, 3)
    norms = th.mode_norms(th.coherence_modes(r, hb))
    for k, v in norms.items():
        stack = sum(p1 @ r @ p2 for i, p1 in enumerate(hb.blocks)
                    for j, p2 in enumerate(hb.blocks) if i - j == k)
        assert v == pytest.approx(np.sum(np.linalg.svd(stack, compute_uv=False)))


def test_time_average():
    hb = th.discretize(random_hermitian(4, 5), 0.4)
    r = random_state(4, 6)
    assert np.allclose(th.time_average(r, hb, 1), r)
    assert np.allclose(th.time_average(r, hb, hb.m), pinch(r, hb.blocks), atol=1e-9)
    lhs, rhs = th.dephasing_bound(r, hb, 2)
    assert lhs <= rhs + 1e-12


def _premise(rho, hb, beta):
    w = hb.weight(beta)
    hi, lo = dv.d_max(rho, w).value, dv.d_min_half(rho, w).value
    return 0.5 * (hi + lo), 0.5 * (hi - lo)


def test_suppression_diagonal_and_gibbs():
    hb = th.discretize(np.diag([0.0, 0.7, 1.9]), 0.5)
    for rho in (np.diag([0.5, 0.3, 0.2]), hb.gibbs(1.0).state):
        s, d = _premise(rho, hb, 1.0)
        rep = th.suppression_check(rho, hb, 1.0, s, d)
        assert rep.holds


@pytest.mark.parametrize("seed", range(10))
def test_suppression_random(seed):
    rng = rng_from_seed(seed)
    hb = th.discretize(random_hermitian(6, rng), 0.3)
    r = random_state(6, rng)
    s, d = _premise(r, hb, 1.0)
    assert th.suppression_check(r, hb, 1.0, s, d).holds


def test_suppression_premise_checked():
    hb = th.discretize(np.diag([0.0, 1.0]), 0.5)
    s, d = _premise(PLUS, hb, 1.0)
    with pytest.raises(PreconditionError):
        th.suppression_check(PLUS, hb, 1.0, s + 5, d)


def test_smoothing_candidate_gibbs_fixed_point():
    hb = th.discretize(np.diag([0.0, 0.6, 1.3]), 0.5)
    g = hb.gibbs(1.0).state
    sc = th.smoothing_candidate(g, hb, 1.0, 0.0)
    assert np.allclose(sc.tau, g, atol=1e-9)
    assert sc.delta_prime <= sc.delta_in + np.log(2 * hb.m) + 1e-12


def test_smoothing_candidate_classical():
    hb = th.discretize(np.diag([0.0, 0.6, 1.3]), 0.5)
    sc = th.smoothing_candidate(np.diag([0.2, 0.5, 0.3]), hb, 1.0, 1e-4)
    assert np.allclose(sc.tau, np.diag(np.diag(sc.tau)), atol=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_smoothing_candidate_qubit(seed):
    rng = rng_from_seed(seed)
    hb = th.discretize(random_hermitian(2, rng), 0.3)
    r = random_state(2, rng)
    sc = th.smoothing_candidate(r, hb, 1.0, 1e-4)
    assert sc.distance <= 0.1
    assert th.suppression_check(sc.tau, hb, 1.0, sc.s, sc.delta_prime + 1e-12).holds


def test_thermomajorization_curve_of_gibbs_is_a_line():
    g = th.gibbs(np.diag([0.0, 0.4, 1.3]), 1.0)
    c = th.thermomajorization_curve(g.state, g)
    z = np.exp(g.log_z)
    assert c.x[-1] == pytest.approx(z)
    assert np.allclose(c.y, c.x / z)


def test_tm_reflexive():
    g = th.gibbs(np.diag([0.0, 0.5, 1.0]), 1.0)
    p = np.diag([0.5, 0.3, 0.2])
    assert th.tm_convertible(p, p, g)
    assert th.gibbs_stochastic_feasible(p, p, g)


def test_tm_to_gibbs_always_possible():
    g = th.gibbs(np.diag([0.0, 0.5, 1.0]), 1.0)
    p = np.diag([0.1, 0.1, 0.8])
    assert th.tm_convertible(p, g.state, g)
    assert not th.tm_convertible(g.state, np.diag([1.0, 0.0, 0.0]), g)


def test_tm_rejects_coherent_input():
    g = th.gibbs(np.diag([0.0, 1.0]), 1.0)
    with pytest.raises(PreconditionError):
        th.tm_convertible(PLUS, PLUS, g)


@pytest.mark.parametrize("index", range(40))
def test_tm_curve_matches_lp(index):
    assert tm_rows(11, index)[0].passed


def test_work_reversible_at_gibbs():
    g = th.gibbs(np.diag([0.0, 0.7]), 1.3)
    distill = th.work_of_transition(g.state, g, 0.0, "distill")
    form = th.work_of_transition(g.state, g, 0.0, "form")
    assert distill.value == pytest.approx(-form.value, abs=1e-10)
    assert form.value == pytest.approx(-g.log_z / g.beta)


def test_work_pure_ground_state():
    g = th.gibbs(np.diag([0.3, 1.0]), 2.0)
    ground = np.diag([1.0, 0.0])
    distill = th.work_of_transition(ground, g, 0.0, "distill")
    form = th.work_of_transition(ground, g, 0.0, "form")
    assert form.value == pytest.approx(0.3)
    assert form.value + distill.value == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_distillation_work_matches_curve(seed):
    rng = rng_from_seed(seed)
    g = th.gibbs(np.diag(np.sort(rng.uniform(0, 2, 4))), 1.0)
    p = np.diag(rng.dirichlet(np.ones(4)))
    w = th.work_of_transition(p, g, 0.01, "distill")
    assert w.value == pytest.approx(th.curve_distillation_work(p, g, 0.01), abs=1e-9)


def test_work_direction_validated():
    g = th.gibbs(np.diag([0.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        th.work_of_transition(g.state, g, 0.0, "extract")


def test_gpm_worked_example():
    ket0, half = np.diag([1.0, 0.0]), np.eye(2) / 2
    rp = np.diag([0.75, 0.25])
    g = th.gpm_construct(ket0, half, rp, half)
    assert g.c == pytest.approx(0.5)
    assert g.c_prime == pytest.approx(2 / 3)
    assert np.allclose(apply_channel(g.channel, ket0), rp)
    assert np.allclose(apply_channel(g.channel, half), half)
    assert np.allclose(g.stochastic.sum(axis=0), 1) and g.stochastic.min() >= 0


def test_gpm_identity_case():
    # rho is sigma restricted to its support, so D_max = D_0 and c' = c
    s = np.diag([0.5, 0.3, 0.2])
    r = np.diag([0.625, 0.375, 0.0])
    g = th.gpm_construct(r, s, r, s)
    assert np.allclose(apply_channel(g.channel, r), r)
    assert np.allclose(apply_channel(g.channel, s), s)


def test_gpm_premise_violation():
    with pytest.raises(PreconditionError):
        th.gpm_construct(np.eye(2) / 2, np.eye(2) / 2, np.diag([1.0, 0.0]), np.eye(2) / 2)


@pytest.mark.parametrize("index", range(20))
def test_gpm_suite(index):
    assert all(row.passed for row in gpm_rows(3, index))


def test_gpm_is_gibbs_preserving():
    gin = th.gibbs(np.diag([0.0, 1.0]), 1.0)
    r = np.diag([1.0, 0.0])
    rp = 0.9 * gin.state + 0.1 * r
    g = th.gpm_construct(r, gin.state, rp, gin.state)
    ok, _ = th.is_gibbs_subpreserving(g.channel, gin, gin)
    assert ok


def test_unital_channel_preserves_uniform_gibbs():
    g = th.gibbs(np.zeros((3, 3)), 1.0)
    ch = Channel([random_unitary(3, 4)])
    assert th.is_gibbs_subpreserving(ch, g, g)[0]


def test_random_channel_is_generally_not_gibbs_preserving():
    g = th.gibbs(np.diag([0.0, 1.0, 2.5]), 1.0)
    flags = [th.is_gibbs_subpreserving(random_channel(3, 3, s), g, g) for s in range(5)]
    assert not all(ok for ok, _ in flags)
    assert all(slack > 0 for ok, slack in flags if not ok)


def test_thermal_operation_preserves_gibbs():
    hs, hbath = np.diag([0.0, 1.0]), np.diag([0.0, 1.0, 1.0, 2.0])
    htot = np.kron(hs, np.eye(4)) + np.kron(np.eye(2), hbath)
    u = th.random_energy_conserving_unitary(htot, 8)
    assert np.allclose(u @ htot, htot @ u, atol=1e-10)
    ch = th.thermal_operation(u, hs, hbath, 0.8)
    gs = th.gibbs(hs, 0.8).state
    assert np.allclose(apply_channel(ch, gs), gs, atol=1e-10)


def test_dilation_of_identity():
    h = np.diag([0.0, 0.5, 1.0])
    d = th.dilate_isometry(np.eye(3), h, h)
    psi = np.array([0.6, 0.0, 0.8])
    assert np.allclose(d.recover(psi), psi)
    u = d.unitary
    assert np.allclose(u.conj().T @ u, np.eye(u.shape[0]))
    assert np.allclose(u @ d.h_total, d.h_total @ u, atol=1e-10)


def test_dilation_of_degenerate_swap():
    h = np.diag([0.0, 1.0, 1.0])
    v = np.eye(3)[:, [0, 2, 1]]
    assert th.energy_conserving_check(v, h, h)
    d = th.dilate_isometry(v, h, h)
    psi = np.array([0.0, 0.6, 0.8])
    assert np.allclose(d.recover(psi), v @ psi)
    assert np.allclose(d.unitary @ d.h_total, d.h_total @ d.unitary, atol=1e-10)


def test_dilation_with_battery():
    h_in, h_out = np.diag([0.0, 2.0]), np.diag([0.0, 1.0])
    v = np.zeros((2, 2))
    v[0, 0] = 1.0
    d = th.dilate_isometry(v, h_in, h_out, f_index=1, i_index=1)
    assert np.allclose(d.recover(np.array([1.0, 0.0])), [1.0, 0.0])
    assert np.allclose(d.unitary @ d.h_total, d.h_total @ d.unitary, atol=1e-10)


def test_dilation_rejects_non_conserving():
    with pytest.raises(PreconditionError):
        th.dilate_isometry(np.eye(2)[:, ::-1], np.diag([0.0, 1.0]), np.diag([0.0, 1.0]))


def test_reference_frame_diagonal():
    hb = th.discretize(np.diag([0.0, 0.5, 1.0]), 0.5)
    r = np.diag([0.2, 0.3, 0.5])
    res = th.reference_frame_postselect(r, hb, 4)
    assert np.allclose(res.induced, r)


def test_reference_frame_exact_identity_and_decay():
    hb = th.discretize(np.diag([0.0, 0.5, 1.0]), 0.5)
    r = random_state(3, 9)
    assert th.reference_frame_postselect(r, hb, 6).residual < 1e-12
    devs = [th.reference_frame_postselect(r, hb, d).deviation for d in (4, 8, 16, 32)]
    assert all(b < a for a, b in zip(devs, devs[1:]))
    assert devs[-1] * 32 == pytest.approx(devs[-2] * 16, rel=1e-9)


def test_quasi_monotonicity_identity_process():
    g = th.gibbs(np.diag([0.0, 0.8]), 1.0)
    r = random_state(2, 10)
    res = th.quasi_monotonicity_audit(r, r, th.AssistedBudget(0.0, 0.0, 0.0), g, g, 0.2)
    assert res.holds


def test_quasi_monotonicity_gpm_budget():
    g = th.gibbs(np.diag([0.0, 0.8]), 1.0)
    r = np.diag([1.0, 0.0])
    rp = np.diag([0.6, 0.4])
    w = (dv.d_max(r, g.weight).value - dv.d_min_zero(r, g.weight).value) / g.beta
    res = th.quasi_monotonicity_audit(r, rp, th.AssistedBudget(w, 0.0, 0.05), g, g, 0.2)
    assert res.holds


def test_quasi_monotonicity_flags_uphill():
    g = th.gibbs(np.diag([0.0, 2.0]), 1.0)
    res = th.quasi_monotonicity_audit(g.state, np.diag([0.0, 1.0]),
                                      th.AssistedBudget(0.0, 0.0, 0.0), g, g, 0.2)
    assert not res.holds and res.slack < 0


def test_reference_frame_bound_for_product_input():
    hb = th.discretize(np.diag([0.0, 0.5, 0.5, 1.0]), 0.5)
    r = tensor(random_state(2, 1), random_state(2, 2))
    res = th.reference_frame_postselect(r, hb, 8)
    assert res.holds
    assert res.residual < 1e-12
