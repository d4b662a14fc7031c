"""One-shot divergences and entropies with certified intervals.

All divergences take a subnormalized state ``rho`` and a PSD operator
``sigma`` (not necessarily normalized) and return a :class:`DivergenceResult`
in nats.  The smoothed variants optimize over the generalized-trace-distance
ball ``{tau >= 0, tr tau <= 1, D(tau, rho) <= eps}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .errors import CertificationError, SolverError, SupportError
from .linalg import (
    as_psd,
    as_state,
    fidelity,
    herm,
    hermitian,
    inv_sqrt_on_support,
    psd_eig,
    sqrtm_psd,
    support_projector,
    trace_distance,
)
from . import sdp

SUPPORT_TOL = 1e-10
BOUNDARY_TOL = 1e-11
CERT_WIDTH = 1e-6
SDP_CROSSCHECK_DIM = 8
SUBSET_CAP = 22


@dataclass(frozen=True)
class Test:
    """A test operator ``0 <= Q <= I``."""

    q: np.ndarray


@dataclass(frozen=True)
class DualPair:
    """Dual certificate ``(mu, X)`` with ``mu rho <= sigma + X``."""

    mu: float
    x: Any


@dataclass(frozen=True)
class SmoothCandidate:
    """A state in the smoothing ball attaining the reported value."""

    tau: np.ndarray


@dataclass(frozen=True)
class Scalar:
    """Scalar witness, e.g. the optimal ``lambda`` of the max divergence."""

    value: float


@dataclass
class DivergenceResult:
    """A divergence value in nats with a certified interval.

    Attributes
    ----------
    value, lower, upper : float
        ``lower <= value <= upper``.
    witness : Test, DualPair, SmoothCandidate, Scalar or None
    dual_witness : DualPair or None
        Second certificate when two are available (hypothesis testing).
    regime : str
        How the value was obtained, e.g. ``"exact"``, ``"sdp"``, ``"interval"``.
    info : dict
        Diagnostics (solver statuses, cross-check discrepancies).
    """

    value: float
    lower: float
    upper: float
    witness: Any = None
    dual_witness: Any = None
    regime: str = "exact"
    info: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def shifted(self, c: float) -> "DivergenceResult":
        return DivergenceResult(self.value + c, self.lower + c, self.upper + c, self.witness,
                                self.dual_witness, self.regime, dict(self.info))


@dataclass(frozen=True)
class SmoothingBall:
    """Generalized-trace-distance ball of subnormalized states around ``center``."""

    center: np.ndarray
    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        object.__setattr__(self, "center", as_state(self.center, "center"))

    def contains(self, tau, tol: float = 1e-9) -> bool:
        t = hermitian(tau)
        w = np.linalg.eigvalsh(t)
        if w[0] < -tol or np.real(np.trace(t)) > 1.0 + tol:
            return False
        return trace_distance(t, self.center) <= self.epsilon + tol


def _exact(v: float, witness=None, **info) -> DivergenceResult:
    return DivergenceResult(float(v), float(v), float(v), witness, None, "exact", info)


def _inputs(rho, sigma):
    r = as_state(rho, "rho")
    s = as_psd(sigma, "sigma")
    if r.shape != s.shape:
        raise ValueError(f"dimension mismatch: {r.shape} vs {s.shape}")
    return r, s


def check_support(rho, sigma, tol: float = SUPPORT_TOL) -> None:
    """Raise :class:`SupportError` if ``tr[(I - P_sigma) rho] > tol``."""
    p = support_projector(sigma)
    leak = float(np.real(np.trace(rho) - np.trace(p @ rho)))
    if leak > tol:
        raise SupportError(f"rho has weight {leak:.3e} outside the support of sigma")


def _kl(r, s) -> float:
    wr, _ = psd_eig(r)
    ws, vs = psd_eig(s)
    keep = ws > 1e-300
    pos = wr > 0
    ent = float(np.sum(wr[pos] * np.log(wr[pos])))
    diag = np.real(np.einsum("ij,jk,ki->i", vs.conj().T, r, vs))
    cross = float(np.sum(diag[keep] * np.log(ws[keep])))
    return ent - cross


def d_kl(rho, sigma) -> DivergenceResult:
    """Relative entropy ``tr[rho ln rho - rho ln sigma]``.

    Examples
    --------
    >>> r = np.diag([0.9, 0.1]); s = np.eye(2) / 2
    >>> bool(np.isclose(d_kl(r, s).value, 0.9 * np.log(1.8) + 0.1 * np.log(0.2)))
    True
    """
    r, s = _inputs(rho, sigma)
    check_support(r, s)
    return _exact(_kl(r, s))


def _d0(r, s) -> tuple[float, np.ndarray]:
    p = support_projector(r)
    t = float(np.real(np.trace(p @ s)))
    return (-np.log(t) if t > 0 else np.inf), p


def d_min_zero(rho, sigma) -> DivergenceResult:
    """Min divergence ``-ln tr[P_rho sigma]``; witness is ``P_rho``."""
    r, s = _inputs(rho, sigma)
    check_support(r, s)
    v, p = _d0(r, s)
    return _exact(v, Test(p))


def _dhalf(r, s) -> float:
    f = fidelity(r, s)
    return -2.0 * np.log(f) if f > 0 else np.inf


def d_min_half(rho, sigma) -> DivergenceResult:
    """``-ln F(rho, sigma)^2`` with ``F = ||rho^{1/2} sigma^{1/2}||_1``."""
    r, s = _inputs(rho, sigma)
    check_support(r, s)
    return _exact(_dhalf(r, s))


def _dmax(r, s) -> float:
    si = inv_sqrt_on_support(s)
    lam = float(np.linalg.eigvalsh(herm(si @ r @ si))[-1])
    return np.log(lam) if lam > 0 else -np.inf


def d_max(rho, sigma) -> DivergenceResult:
    """Max divergence ``ln min{lambda : rho <= lambda sigma}``; witness is ``lambda``."""
    r, s = _inputs(rho, sigma)
    check_support(r, s)
    v = _dmax(r, s)
    return _exact(v, Scalar(float(np.exp(v))))


def renyi_entropy(rho, alpha) -> float:
    """``S_alpha(rho) = -D_alpha(rho || I)`` for ``alpha`` in {0, 1/2, 1, inf}."""
    r = as_state(rho)
    ident = np.eye(r.shape[0])
    fn = {0: d_min_zero, 0.5: d_min_half, 1: d_kl, np.inf: d_max}
    key = float(alpha)
    if key not in fn:
        raise ValueError("alpha must be one of 0, 0.5, 1, inf")
    return -fn[key](r, ident).value


# --------------------------------------------------------------------------
# hypothesis testing


def _blocks_of(r, s):
    return [(r, s, 1)]


def _np_beta(blocks, mu, strict=True):
    """``tr[rho Q]`` and ``tr[sigma Q]`` for ``Q = Proj{rho - mu sigma > 0}``."""
    br = bs = 0.0
    for r, s, mult in blocks:
        w, v = np.linalg.eigh(herm(r - mu * s))
        tol = BOUNDARY_TOL * max(1.0, float(np.max(np.abs(w))))
        sel = w > tol if strict else w >= -tol
        vk = v[:, sel]
        br += mult * float(np.real(np.sum(vk.conj() * (r @ vk))))
        bs += mult * float(np.real(np.sum(vk.conj() * (s @ vk))))
    return br, bs


def _np_parts(blocks, mu):
    """Strict-positive and boundary projectors of ``rho - mu sigma`` per block."""
    out = []
    for r, s, _ in blocks:
        w, v = np.linalg.eigh(herm(r - mu * s))
        tol = BOUNDARY_TOL * max(1.0, float(np.max(np.abs(w))))
        pos = v[:, w > tol]
        bnd = v[:, np.abs(w) <= tol]
        out.append((pos @ pos.conj().T, bnd @ bnd.conj().T))
    return out


def _tr(blocks, ops, which):
    return sum(mult * float(np.real(np.trace(op @ (r if which == 0 else s))))
               for (r, s, mult), op in zip(blocks, ops))


@dataclass
class NPResult:
    q_blocks: list
    mu: float
    primal: float  # tr[sigma Q] / eta, an upper bound on the optimum
    dual: float  # mu_d - tr X / eta, a lower bound on the optimum
    x_blocks: list


def neyman_pearson(blocks, eta: float, max_iter: int = 400) -> NPResult:
    """Optimal test for block-diagonal ``(rho, sigma)``.

    Parameters
    ----------
    blocks : list of (r_b, s_b, multiplicity)
        Block-diagonal decomposition; the full operators are
        ``sum_b r_b (x) I_{mult_b}``.
    eta : float
        Required ``tr[rho Q]``.

    Returns
    -------
    NPResult
        The test ``Q`` (per block), the threshold ``mu`` and two-sided bounds on
        ``min tr[sigma Q] / eta``.
    """
    tr_rho = sum(m * float(np.real(np.trace(r))) for r, _, m in blocks)
    if not 0 < eta <= tr_rho * (1 + 1e-12):
        raise ValueError(f"eta={eta} must lie in (0, tr rho = {tr_rho}]")
    eta = min(eta, tr_rho)
    if eta >= tr_rho * (1 - 1e-12):
        # the test must contain the support of rho: Q = P_rho is optimal
        q = [support_projector(r) if np.real(np.trace(r)) > 0 else np.zeros_like(r)
             for r, _, _ in blocks]
        primal = _tr(blocks, q, 1) / eta
        return NPResult(q, np.inf, primal, 0.0, [None for _ in blocks])
    # upper end: beyond the max-divergence threshold the test is empty
    lam = 0.0
    for r, s, _ in blocks:
        lam = max(lam, float(np.exp(_dmax(r, s))))
    mu_hi = lam * (1 + 1e-9) + 1e-300
    b_hi = _np_beta(blocks, mu_hi)[0]
    mu_lo = mu_hi
    b_lo = b_hi
    while b_lo < eta and mu_lo > 1e-250:
        mu_hi, b_hi = mu_lo, b_lo
        mu_lo *= 1e-3
        b_lo = _np_beta(blocks, mu_lo)[0]
    if b_lo < eta:
        mu_lo = 0.0
    for _ in range(max_iter):
        if mu_lo > 0 and mu_hi / mu_lo - 1.0 < 4e-16:
            break
        if mu_lo == 0.0:
            mid = mu_hi * 1e-3 if mu_hi > 1e-250 else 0.5 * mu_hi
            if mid == mu_hi or mid <= 0:
                break
        else:
            mid = np.sqrt(mu_lo * mu_hi)
        bm = _np_beta(blocks, mid)[0]
        if bm >= eta:
            mu_lo = mid
        else:
            mu_hi = mid
    mu = mu_hi
    parts = _np_parts(blocks, mu)
    pos = [p for p, _ in parts]
    bnd = [b for _, b in parts]
    b_pos = _tr(blocks, pos, 0)
    b_bnd = _tr(blocks, bnd, 0)
    if b_pos <= eta <= b_pos + b_bnd and b_bnd > 0:
        t = (eta - b_pos) / b_bnd
        q = [p + t * b for p, b in zip(pos, bnd)]
    else:
        # continuous stretch of the power function: mix the bracketing tests
        if mu_lo > 0:
            lo = [p + b for p, b in _np_parts(blocks, mu_lo)]
        else:
            lo = [support_projector(r) for r, _, _ in blocks]
        hi = [p for p in pos]
        blo, bhi = _tr(blocks, lo, 0), _tr(blocks, hi, 0)
        t = 1.0 if blo - bhi <= 0 else float(np.clip((eta - bhi) / (blo - bhi), 0.0, 1.0))
        q = [(1 - t) * h + t * l for h, l in zip(hi, lo)]
    # enforce tr[rho Q] >= eta exactly by mixing in the identity if needed
    got = _tr(blocks, q, 0)
    if got < eta * (1 - 1e-13):
        s = (eta - got) / max(tr_rho - got, 1e-300)
        q = [(1 - s) * qq + s * np.eye(qq.shape[0]) for qq in q]
    primal = _tr(blocks, q, 1) / eta
    # dual candidate at mu_d = 1/mu
    if mu > 0:
        mu_d = 1.0 / mu
        xs = []
        tx = 0.0
        for r, s, mult in blocks:
            w, v = np.linalg.eigh(herm(mu_d * r - s))
            w = np.clip(w, 0, None)
            xb = (v * w) @ v.conj().T
            xs.append(xb)
            tx += mult * float(np.sum(w))
        dual = mu_d - tx / eta
    else:
        mu_d, xs, dual = 0.0, [np.zeros_like(r) for r, _, _ in blocks], 0.0
    return NPResult(q, mu_d, primal, dual, xs)


def _dh_sdp(r, s, eta, tol=1e-9):
    """Primal and dual SDPs of the hypothesis-testing divergence.

    ``sigma`` is rescaled by ``exp(D_max(rho||sigma))`` so that the optimal value
    is at least one and the solver's relative tolerance becomes a relative
    accuracy in the value; the values returned are scaled back.
    """
    n = r.shape[0]
    lam = float(np.exp(_dmax(r, s)))
    s = s * lam
    p = sdp.SdpProblem("min")
    q = p.add_block(n)
    p.set_objective({q: s / eta})
    p.add_constraint({q: r}, ">=", eta)
    p.add_matrix_constraint([(q, 1.0)], "<=", np.eye(n))
    prim = sdp.solve(p, tol=tol, max_iter=300, gap_floor=0.0)
    d = sdp.SdpProblem("max")
    mu = d.add_block(1)
    x = d.add_block(n)
    d.set_objective({mu: 1.0, x: -np.eye(n) / eta})
    d.add_matrix_constraint([(mu, r), (x, -1.0)], "<=", s)
    dual = sdp.solve(d, tol=tol, max_iter=300, gap_floor=0.0)
    for sol in (prim, dual):
        sol.value /= lam
        sol.dual_value /= lam
        sol.gap /= lam
    dual.primal[0] = dual.primal[0] / lam
    dual.primal[1] = dual.primal[1] / lam
    return prim, dual


def _usable(sol, slack: float = 1e-7) -> bool:
    """Optimal, or a stalled run whose true residuals are within ``slack``."""
    return sol.status == "Optimal" or (
        sol.status == "MaxIterations" and max(sol.residuals.values()) <= slack)


def _repair_test(qm, r, s, eta):
    """Project a numerical test into ``[0, I]`` and restore ``tr[rho Q] >= eta``."""
    w, v = np.linalg.eigh(herm(qm))
    qm = (v * np.clip(w, 0, 1)) @ v.conj().T
    got = float(np.real(np.trace(r @ qm)))
    tr_rho = float(np.real(np.trace(r)))
    if got < eta:
        t = (eta - got) / max(tr_rho - got, 1e-300)
        qm = (1 - t) * qm + t * np.eye(r.shape[0])
    return float(np.real(np.trace(s @ qm))) / eta


def _repair_dual(mu, r, s, eta):
    w = np.clip(np.linalg.eigvalsh(herm(mu * r - s)), 0, None)
    return mu - float(np.sum(w)) / eta


def d_hyp(rho, sigma, eta: float, crosscheck: bool | None = None,
          agree_tol: float = 1e-6) -> DivergenceResult:
    """Hypothesis-testing divergence ``-ln(eta^{-1} min tr[sigma Q])``.

    The minimum runs over tests ``0 <= Q <= I`` with ``tr[rho Q] >= eta``.
    Computed by quantum Neyman-Pearson bisection; for dimension up to 8 (or
    when ``crosscheck`` is set) the primal and dual SDPs are solved
    independently and must agree to ``agree_tol`` in nats.  At ``eta = tr rho``
    the check is against the support-projector test instead.

    Raises
    ------
    SupportError
    CertificationError
        If the Neyman-Pearson and SDP values disagree beyond ``agree_tol``.
    """
    r, s = _inputs(rho, sigma)
    check_support(r, s)
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    np_res = neyman_pearson(_blocks_of(r, s), eta)
    prim_best, dual_best = np_res.primal, np_res.dual
    info = {"np_primal": np_res.primal, "np_dual": np_res.dual}
    if crosscheck is None:
        crosscheck = r.shape[0] <= SDP_CROSSCHECK_DIM
    tr_r = float(np.real(np.trace(r)))
    if crosscheck and eta >= tr_r * (1 - 1e-12):
        # at eta = tr rho neither program has an interior optimum; the optimal
        # test is the support projector, so check against it directly
        v_np = -np.log(np_res.primal)
        v_supp = -np.log(float(np.real(np.trace(support_projector(r) @ s))) / eta)
        info.update(support_value=v_supp)
        if abs(v_supp - v_np) > agree_tol:
            raise CertificationError(
                f"Neyman-Pearson value {v_np:.12g} and support test {v_supp:.12g} disagree")
    elif crosscheck:
        ps, ds = _dh_sdp(r, s, eta)
        info.update(sdp_primal=ps.value, sdp_dual=ds.value, sdp_primal_status=ps.status,
                    sdp_dual_status=ds.status, sdp_primal_gap=ps.gap, sdp_dual_gap=ds.gap)
        for sol in (ps, ds):
            # a stalled run still counts if its residuals are well inside agree_tol
            if sol.status != "Optimal" and not (
                    sol.status == "MaxIterations" and max(sol.residuals.values()) <= 0.1 * agree_tol):
                raise CertificationError(f"SDP cross-check failed: {ps.status}/{ds.status}")
        v_np = -np.log(np_res.primal)
        for nm, val in (("primal", ps.value), ("dual", ds.value)):
            if val <= 0 or abs(-np.log(val) - v_np) > agree_tol:
                raise CertificationError(
                    f"Neyman-Pearson value {v_np:.12g} and SDP {nm} {-np.log(max(val, 1e-300)):.12g}"
                    f" disagree beyond {agree_tol}")
        prim_best = min(prim_best, _repair_test(ps.primal[0], r, s, eta))
        dual_best = max(dual_best, _repair_dual(float(np.real(ds.primal[0][0, 0])), r, s, eta))
    value = -np.log(np_res.primal)
    lower = -np.log(prim_best)
    upper = -np.log(dual_best) if dual_best > 0 else np.inf
    lower, upper = min(lower, value), max(upper, value)
    return DivergenceResult(value, lower, upper, Test(np_res.q_blocks[0]),
                            DualPair(np_res.mu, np_res.x_blocks[0]), "neyman-pearson", info)


# --------------------------------------------------------------------------
# classical (commuting) helpers, log domain


def classical_kl(p, log_q) -> float:
    """``sum p ln(p/q)`` with ``q`` given by its logarithm."""
    p = np.asarray(p, float)
    log_q = np.asarray(log_q, float)
    pos = p > 0
    if np.any(np.isneginf(log_q[pos])):
        raise SupportError("p is not absolutely continuous with respect to q")
    return float(np.sum(p[pos] * (np.log(p[pos]) - log_q[pos])))


def classical_d_max_smooth(p, log_q, eps: float) -> float:
    """Smoothed max divergence of commuting inputs, in the log domain.

    Returns ``ln min{lambda : sum_i (p_i - lambda q_i)_+ <= eps}``, which is the
    exact value of the smoothed max divergence for diagonal ``rho, sigma``.
    """
    p = np.asarray(p, float)
    log_q = np.asarray(log_q, float)
    pos = p > 0
    if np.any(np.isneginf(log_q[pos])):
        raise SupportError("p is not absolutely continuous with respect to q")
    p, lq = p[pos], log_q[pos]
    if eps >= p.sum():
        return -np.inf
    r = np.log(p) - lq
    order = np.argsort(-r, kind="stable")
    p, lq, r = p[order], lq[order], r[order]
    n = len(p)
    csum = np.cumsum(p)
    for k in range(1, n + 1):
        pk = csum[k - 1]
        lse = logsumexp(lq[:k])
        nxt = r[k] if k < n else -np.inf
        if pk <= eps or np.log(pk - eps) <= nxt + lse:
            if k < n:
                continue
        return float(np.log(pk - eps) - lse) if pk > eps else -np.inf
    return -np.inf


def _subset_sums(w: np.ndarray) -> np.ndarray:
    sums = np.zeros(1)
    for x in w:
        sums = np.concatenate([sums, sums + x])
    return sums


def classical_d_zero_smooth(p, log_q, eps: float, cap: int = SUBSET_CAP):
    """Best subset restriction: max ``-ln q[S]`` over ``S`` with ``p[S^c] <= eps``.

    Returns
    -------
    value : float
    keep : ndarray of bool
        Atoms kept in the optimal restriction.
    """
    p = np.asarray(p, float)
    log_q = np.asarray(log_q, float)
    supp = np.flatnonzero(p > 0)
    if len(supp) > cap:
        raise ValueError(f"support size {len(supp)} exceeds subset-search cap {cap}")
    ps, lq = p[supp], log_q[supp]
    shift = float(np.max(lq))
    qs = np.exp(lq - shift)
    kept_q = _subset_sums(qs)
    kept_p = _subset_sums(ps)
    dropped = ps.sum() - kept_p
    ok = (dropped <= eps + 1e-12) & (kept_p > 0)
    cand = np.where(ok, kept_q, np.inf)
    best = int(np.argmin(cand))
    keep = np.zeros(len(p), bool)
    bits = [(best >> j) & 1 for j in range(len(supp))]
    keep[supp[np.array(bits, bool)]] = True
    val = -(np.log(kept_q[best]) + shift)
    return float(val), keep


def classical_d_hyp(p, q, eta: float, log_q=None) -> DivergenceResult:
    """Exact Neyman-Pearson test for commuting inputs.

    Atoms are sorted by ``p/q`` descending and included until the ``p``-mass
    reaches ``eta``, the last one fractionally.  ``q`` may be given through
    ``log_q`` to avoid underflow.

    Examples
    --------
    >>> bool(np.isclose(classical_d_hyp([1.0, 0.0], [0.5, 0.5], 0.5).value, np.log(2)))
    True
    """
    p = np.asarray(p, float).ravel()
    if log_q is None:
        q = np.asarray(q, float).ravel()
        with np.errstate(divide="ignore"):
            log_q = np.log(q)
    log_q = np.asarray(log_q, float).ravel()
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    pos = p > 0
    if np.any(np.isneginf(log_q[pos])):
        raise SupportError("p is not absolutely continuous with respect to q")
    tot = p.sum()
    if eta > tot * (1 + 1e-12):
        raise ValueError("eta exceeds the total mass of p")
    idx = np.flatnonzero(pos)
    with np.errstate(divide="ignore"):
        ratio = np.log(p[idx]) - log_q[idx]
    order = idx[np.argsort(-ratio, kind="stable")]
    cp = np.cumsum(p[order])
    k = int(np.searchsorted(cp, eta * (1 - 1e-15), side="left"))
    k = min(k, len(order) - 1)
    full = order[:k]
    last = order[k]
    prev = cp[k - 1] if k > 0 else 0.0
    frac = min(1.0, max(0.0, (eta - prev) / p[last]))
    terms = list(log_q[full]) + ([np.log(frac) + log_q[last]] if frac > 0 else [])
    log_beta = logsumexp(terms) if terms else -np.inf
    value = -(log_beta - np.log(eta))
    test = np.zeros(len(p))
    test[full] = 1.0
    test[last] = frac
    mu = float(np.exp(log_q[last] - np.log(p[last])))  # dual threshold 1/(p/q)
    return DivergenceResult(float(value), float(value), float(value), Test(test),
                            DualPair(mu, None), "classical-np", {})


# --------------------------------------------------------------------------
# smoothing


def _ball_problem(r, sense, eps):
    """SDP skeleton with ``tau`` in the smoothing ball around ``r``."""
    n = r.shape[0]
    p = sdp.SdpProblem(sense)
    tau = p.add_block(n)
    a = p.add_block(n)
    b = p.add_block(n)
    t = p.add_block(1)
    tr_r = float(np.real(np.trace(r)))
    p.add_constraint({tau: 1.0}, "<=", 1.0)
    p.add_matrix_constraint([(tau, 1.0), (a, -1.0), (b, 1.0)], "=", r)
    p.add_constraint({t: 1.0, tau: -1.0}, ">=", -tr_r)
    p.add_constraint({t: 1.0, tau: 1.0}, ">=", tr_r)
    p.add_constraint({a: 0.5, b: 0.5, t: 0.5}, "<=", eps)
    return p, tau


def _into_ball(tau, r, eps):
    """Make a numerical candidate PSD and move it toward ``r`` until inside the ball."""
    w, v = np.linalg.eigh(herm(tau))
    tau = (v * np.clip(w, 0, None)) @ v.conj().T
    tr = float(np.real(np.trace(tau)))
    if tr > 1:
        tau = tau / tr
    d = trace_distance(tau, r)
    if d > eps:
        s = 1.0 - eps / d
        tau = (1 - s) * tau + s * r
        # convexity gives distance <= (1-s) d = eps; guard roundoff
        while trace_distance(tau, r) > eps:
            tau = 0.999999 * tau + 0.000001 * r
    return herm(tau)


def _commuting_basis(r, s, tol=1e-10):
    """Common eigenbasis of commuting Hermitian ``r``, ``s`` (or None)."""
    if np.max(np.abs(r @ s - s @ r)) > tol * max(1.0, np.max(np.abs(r)) * np.max(np.abs(s))):
        return None
    w, v = np.linalg.eigh(herm(r))
    basis = []
    i = 0
    n = len(w)
    scale = max(1.0, float(np.max(np.abs(w))))
    while i < n:
        j = i + 1
        while j < n and abs(w[j] - w[i]) <= 1e-9 * scale:
            j += 1
        blk = v[:, i:j]
        sb = herm(blk.conj().T @ s @ blk)
        _, u = np.linalg.eigh(sb)
        basis.append(blk @ u)
        i = j
    return np.concatenate(basis, axis=1)


def d_max_smooth(rho, sigma, eps: float, tol: float = 1e-9) -> DivergenceResult:
    """Smoothed max divergence, ``min`` of the max divergence over the ball.

    Commuting inputs use the closed form of :func:`classical_d_max_smooth`;
    otherwise a single SDP over ``(tau, A, B, lambda, t)`` is solved, where
    ``t`` is an epigraph variable for ``|tr tau - tr rho|``.  The witness is
    the optimal ``tau`` (moved into the ball if round-off left it outside),
    whose exact max divergence gives the upper end of the interval; the lower
    end is the SDP dual value.
    """
    r, s = _inputs(rho, sigma)
    check_support(r, s)
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    if eps == 0:
        res = d_max(r, s)
        return DivergenceResult(res.value, res.value, res.value, SmoothCandidate(r), None, "exact")
    basis = _commuting_basis(r, s)
    if basis is not None:
        pr = np.real(np.einsum("ji,jk,ki->i", basis.conj(), r, basis))
        qs = np.real(np.einsum("ji,jk,ki->i", basis.conj(), s, basis))
        pr = np.clip(pr, 0, None)
        with np.errstate(divide="ignore"):
            lq = np.log(np.clip(qs, 0, None))
        v = classical_d_max_smooth(pr, lq, eps)
        tau_d = np.minimum(pr, np.exp(v + lq)) if np.isfinite(v) else np.zeros_like(pr)
        tau = herm((basis * tau_d) @ basis.conj().T)
        return DivergenceResult(v, v, v, SmoothCandidate(tau), None, "classical-exact")
    # sigma is rescaled by exp(D_max) so the optimal lambda is O(1)
    shift = _dmax(r, s)
    p, tau_b = _ball_problem(r, "min", eps)
    lam = p.add_block(1)
    p.set_objective({lam: 1.0})
    p.add_matrix_constraint([(lam, s * np.exp(shift)), (tau_b, -1.0)], ">=", np.zeros_like(s))
    sol = sdp.solve(p, tol=tol, max_iter=300)
    # the upper end is certified by the repaired candidate, so a near-optimal stall is kept
    if not _usable(sol, slack=1e-6):
        raise SolverError(f"smoothed max-divergence SDP ended with status {sol.status}")
    tau = _into_ball(sol.primal[tau_b], r, eps)
    upper = _dmax(tau, s)
    lower = np.log(sol.dual_value) + shift if sol.dual_value > 0 else -np.inf
    value = float(np.log(max(sol.value, 1e-300))) + shift
    value = min(max(value, lower), upper)
    return DivergenceResult(value, min(lower, upper), upper, SmoothCandidate(tau), None, "sdp",
                            {"sdp_value": sol.value * np.exp(shift), "sdp_dual": sol.dual_value * np.exp(shift),
                             "gap": sol.gap, "shift": shift})


def _fid_grad(tau, s_half, reg=1e-12):
    m = herm(s_half @ tau @ s_half)
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0, None) + reg * max(1.0, float(np.max(w)))
    mi = (v * w ** -0.5) @ v.conj().T
    return herm(0.5 * s_half @ mi @ s_half)


def _half_upper(r, s, eps):
    """Upper bound on the smoothed D_{1/2} from the angle triangle inequality."""
    ts = float(np.real(np.trace(s)))
    s_hat = s / ts
    f0 = min(1.0, fidelity(r, s_hat))
    ang = np.arccos(f0) + np.arcsin(min(1.0, np.sqrt(2 * eps)))
    if ang >= np.pi / 2:
        return np.inf
    return float(-np.log(ts) - 2.0 * np.log(np.cos(ang)))


def d_half_smooth(rho, sigma, eps: float, starts=(), max_steps: int = 20,
                  tol: float = 1e-9) -> DivergenceResult:
    """Smoothed ``D_{1/2}``: maximum of ``-ln F(tau, sigma)^2`` over the ball.

    Maximizing the divergence means minimizing the fidelity, a concave
    function of ``tau``, over a convex set; the global optimum sits at an
    extreme point and is not given by a single convex program.  We run
    successive linearization (each step an SDP minimizing ``tr[G tau]`` over
    the ball, ``G`` the fidelity gradient), from several starting points, and
    report the best candidate as ``value = lower``.  ``upper`` is a rigorous
    bound from the triangle inequality for the angle ``arccos F`` together
    with ``P <= sqrt(2 eps)``.

    Parameters
    ----------
    starts : iterable of ndarray
        Extra starting points (must lie in the ball).
    """
    r, s = _inputs(rho, sigma)
    check_support(r, s)
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    base = _dhalf(r, s)
    if eps == 0:
        return DivergenceResult(base, base, base, SmoothCandidate(r), None, "exact")
    s_half = sqrtm_psd(s)
    ball = SmoothingBall(r, eps)
    cands = [r, (1 - eps) * r] + [np.asarray(t, complex) for t in starts]
    basis = _commuting_basis(r, s)
    if basis is not None:
        pr = np.clip(np.real(np.einsum("ji,jk,ki->i", basis.conj(), r, basis)), 0, None)
        qs = np.real(np.einsum("ji,jk,ki->i", basis.conj(), s, basis))
        with np.errstate(divide="ignore"):
            lq = np.log(np.clip(qs, 0, None))
        if np.count_nonzero(pr) <= SUBSET_CAP:
            _, keep = classical_d_zero_smooth(pr, lq, eps)
            cands.append(herm((basis * np.where(keep, pr, 0.0)) @ basis.conj().T))
    best_v, best_tau = -np.inf, r
    for start in cands:
        if not ball.contains(start):
            continue
        tau = start
        f = fidelity(tau, s)
        for _ in range(max_steps):
            g = _fid_grad(tau, s_half)
            p, tb = _ball_problem(r, "min", eps)
            p.set_objective({tb: g})
            sol = sdp.solve(p, tol=tol, max_iter=200)
            if sol.status not in ("Optimal", "MaxIterations"):
                break
            new = _into_ball(sol.primal[tb], r, eps)
            fn = fidelity(new, s)
            if fn >= f - 1e-12:
                break
            tau, f = new, fn
        v = -2.0 * np.log(f) if f > 0 else np.inf
        if v > best_v:
            best_v, best_tau = v, tau
    upper = max(_half_upper(r, s, eps), best_v)
    return DivergenceResult(best_v, best_v, upper, SmoothCandidate(best_tau), None,
                            "local-search", {"starts": len(cands)})


def _min_distance_on_subspace(r, vk, tol=1e-10):
    """``min D(tau, rho)`` over ``tau >= 0``, ``tr tau <= 1`` supported in ``range(vk)``."""
    n, k = vk.shape
    p = sdp.SdpProblem("min")
    tk = p.add_block(k)
    a = p.add_block(n)
    b = p.add_block(n)
    t = p.add_block(1)
    tr_r = float(np.real(np.trace(r)))
    p.set_objective({a: 0.5, b: 0.5, t: 0.5})
    p.add_constraint({tk: 1.0}, "<=", 1.0)
    p.add_matrix_constraint([(tk, ("congruence", vk)), (a, -1.0), (b, 1.0)], "=", r)
    p.add_constraint({t: 1.0, tk: -1.0}, ">=", -tr_r)
    p.add_constraint({t: 1.0, tk: 1.0}, ">=", tr_r)
    sol = sdp.solve(p, tol=tol, max_iter=200)
    w, v = np.linalg.eigh(herm(sol.primal[tk]))
    tk_m = (v * np.clip(w, 0, None)) @ v.conj().T
    if np.real(np.trace(tk_m)) > 1:
        tk_m = tk_m / np.real(np.trace(tk_m))
    tau = herm(vk @ tk_m @ vk.conj().T)
    return tau, trace_distance(tau, r)


def _d0_candidates(r, s, eps, basis):
    """Projector candidates for the smoothed min divergence with achieved values."""
    best = (-np.inf, None)
    tr_r = float(np.real(np.trace(r)))
    projs = []
    if basis is not None:
        pr = np.clip(np.real(np.einsum("ji,jk,ki->i", basis.conj(), r, basis)), 0, None)
        qs = np.real(np.einsum("ji,jk,ki->i", basis.conj(), s, basis))
        with np.errstate(divide="ignore"):
            lq = np.log(np.clip(qs, 0, None))
        if np.count_nonzero(pr) <= SUBSET_CAP:
            v, keep = classical_d_zero_smooth(pr, lq, eps)
            tau = herm((basis * np.where(keep, pr, 0.0)) @ basis.conj().T)
            best = (v, tau)
    # projectors from the Neyman-Pearson family and from the spectrum of rho
    n = r.shape[0]
    if n <= SDP_CROSSCHECK_DIM:
        w, v = np.linalg.eigh(r)
        for k in range(1, n + 1):
            projs.append(v[:, n - k:])
        for eta in np.linspace(max(tr_r - eps, 1e-6), tr_r, 5):
            res = neyman_pearson([(r, s, 1)], min(eta, tr_r))
            for lo_or_hi in (res.q_blocks[0],):
                ww, vv = np.linalg.eigh(herm(lo_or_hi))
                sel = ww > 1e-9
                if np.any(sel):
                    projs.append(vv[:, sel])
        for vk in projs:
            pk = vk @ vk.conj().T
            if float(np.real(np.trace((np.eye(n) - pk) @ r))) > eps + 1e-12:
                continue
            val = -np.log(float(np.real(np.trace(pk @ s))))
            if val <= best[0] + 1e-12:
                continue
            tau, d = _min_distance_on_subspace(r, vk)
            if d <= eps + 1e-9:
                tau = _into_ball(tau, r, eps)
                real_val, _ = _d0(tau, s)
                if real_val > best[0]:
                    best = (real_val, tau)
    return best


def d_zero_smooth(rho, sigma, eps: float) -> DivergenceResult:
    """Smoothed min divergence, max of ``D_0`` over the ball.

    The optimum is rank-based and non-convex, so the result is an interval.

    * ``lower``/``value``: best achieved candidate (subset restrictions for
      commuting inputs, NP and spectral projectors with a minimum-distance
      state on their range) or the lower estimate
      ``D_H^{1-eps^2/6} - ln((1-eps^2/6)/(eps^2/6))``, whichever is larger.
    * ``upper``: ``D_H^{tr rho - eps} - ln(tr rho - eps)``, the test
      relaxation of the rank constraint (equal to
      ``D_H^{1-eps} - ln(1-eps)`` for normalized ``rho``).

    For ``sigma`` proportional to the identity the top-``k`` spectral
    projector is optimal and the result is exact.  ``regime`` reports
    ``"exact"``, ``"classical-subset"`` or ``"interval"``.
    """
    r, s = _inputs(rho, sigma)
    check_support(r, s)
    tr_r = float(np.real(np.trace(r)))
    if not 0 <= eps < tr_r:
        raise ValueError("eps must lie in [0, tr rho)")
    if eps == 0:
        v, pp = _d0(r, s)
        return DivergenceResult(v, v, v, SmoothCandidate(r), None, "exact")
    n = r.shape[0]
    ts = float(np.real(np.trace(s)))
    if np.max(np.abs(s - ts / n * np.eye(n))) <= 1e-12 * max(1.0, ts):
        w, v = np.linalg.eigh(r)
        w = np.clip(w, 0, None)
        tail = np.cumsum(w)  # ascending: mass of the k smallest
        drop = int(np.searchsorted(tail, eps + 1e-12, side="right"))
        keep = n - drop
        tau = herm((v[:, drop:] * w[drop:]) @ v[:, drop:].conj().T)
        val = -np.log(keep * ts / n)
        return DivergenceResult(val, val, val, SmoothCandidate(tau), None, "exact")
    basis = _commuting_basis(r, s)
    cand_v, cand_tau = _d0_candidates(r, s, eps, basis)
    e2 = eps**2 / 6
    lo_est = -np.inf
    if abs(tr_r - 1.0) <= 1e-10:
        lo_est = d_hyp(r, s, 1 - e2, crosscheck=False).value - np.log((1 - e2) / e2)
    eta_up = tr_r - eps
    up = d_hyp(r, s, eta_up, crosscheck=False)
    upper = up.upper - np.log(eta_up)
    if cand_v >= lo_est:
        value, wit = cand_v, SmoothCandidate(cand_tau)
    else:
        value, wit = lo_est, None
    regime = "classical-subset" if basis is not None else "interval"
    return DivergenceResult(float(value), float(value), float(max(upper, value)), wit, None,
                            regime, {"prop_lower": lo_est, "candidate": cand_v})


def smooth_entropies(rho, eps: float) -> tuple[float, float]:
    """``(H_min^eps, H_max^eps)`` as ``-D_max^eps(rho||I)`` and ``-D_0^eps(rho||I)``."""
    r = as_state(rho)
    ident = np.eye(r.shape[0])
    return -d_max_smooth(r, ident, eps).value, -d_zero_smooth(r, ident, eps).value
