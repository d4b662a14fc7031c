"""Thermodynamic constructions: Gibbs states, binning, coherence, conversion maps.

Divergences against Gibbs states always take the unnormalized weight
``exp(-beta H)`` as second argument, so free energies are absorbed into the
divergence values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from . import divergences as dv
from . import sdp
from .errors import CapError, PreconditionError
from .linalg import (
    Channel,
    as_psd,
    as_state,
    eig_hermitian,
    herm,
    hermitian,
    inv_sqrt_on_support,
    pinch,
    rng_from_seed,
    random_unitary,
    sqrtm_psd,
    support_projector,
    trace_distance,
    trace_norm,
)

JOINT_CAP = 2**12
BIN_GUARD = 1e-9


# --------------------------------------------------------------------------
# Gibbs states and binning


@dataclass(frozen=True)
class GibbsSpec:
    """Gibbs data of a Hamiltonian at inverse temperature ``beta``.

    ``weight`` is ``exp(-beta H)``, ``state`` the normalized Gibbs state,
    ``log_z`` the log partition function and ``free_energy = -log_z / beta``.
    """

    hamiltonian: np.ndarray
    beta: float
    weight: np.ndarray
    state: np.ndarray
    log_z: float
    free_energy: float

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]


def gibbs(h, beta: float) -> GibbsSpec:
    """Gibbs weight, state and free energy of ``h`` at inverse temperature ``beta``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    h = hermitian(h)
    w, v = eig_hermitian(h)
    lw = -beta * w
    log_z = float(logsumexp(lw))
    weight = herm((v * np.exp(lw)) @ v.conj().T)
    state = herm((v * np.exp(lw - log_z)) @ v.conj().T)
    return GibbsSpec(h, float(beta), weight, state, log_z, -log_z / beta)


@dataclass(frozen=True)
class BinnedHamiltonian:
    """Hamiltonian with eigenvalues clamped down to multiples of ``delta``.

    Attributes
    ----------
    original : ndarray
    delta : float
    k0 : int
        Offset with ``energies[k] = (k + k0) * delta``.
    energies : ndarray
        The ``m`` grid energies (some bins may be empty).
    blocks : tuple of ndarray
        Projectors ``P_k``; empty bins give zero projectors.
    levels : ndarray
        Bin index of each eigenvector in ``basis``.
    basis : ndarray
        Eigenvectors of ``original`` (columns).
    """

    original: np.ndarray
    delta: float
    k0: int
    energies: np.ndarray
    blocks: tuple
    levels: np.ndarray
    basis: np.ndarray

    @property
    def m(self) -> int:
        return len(self.energies)

    @property
    def dim(self) -> int:
        return self.original.shape[0]

    @property
    def binned(self) -> np.ndarray:
        e = self.energies[self.levels]
        return herm((self.basis * e) @ self.basis.conj().T)

    @property
    def occupied(self) -> int:
        """Number of distinct eigenvalues of the binned Hamiltonian."""
        return len(np.unique(self.levels))

    @property
    def m_nominal(self) -> int:
        w = np.linalg.eigvalsh(self.original)
        return int(np.ceil((w[-1] - w[0]) / self.delta - BIN_GUARD))

    def weight(self, beta: float) -> np.ndarray:
        """``exp(-beta H')``."""
        e = self.energies[self.levels]
        return herm((self.basis * np.exp(-beta * e)) @ self.basis.conj().T)

    def gibbs(self, beta: float) -> GibbsSpec:
        return gibbs(self.binned, beta)

    def to_eigenbasis(self, x) -> np.ndarray:
        return self.basis.conj().T @ np.asarray(x, dtype=complex) @ self.basis

    def from_eigenbasis(self, x) -> np.ndarray:
        return self.basis @ x @ self.basis.conj().T

    def evolve(self, x, t: float) -> np.ndarray:
        """``exp(-i H' t) x exp(i H' t)``."""
        ph = np.exp(-1j * t * self.energies[self.levels])
        xe = self.to_eigenbasis(x)
        return self.from_eigenbasis(ph[:, None] * xe * ph.conj()[None, :])


def discretize(h, delta: float) -> BinnedHamiltonian:
    """Clamp each eigenvalue of ``h`` to ``delta * floor(E / delta)``.

    The grid runs from ``floor(E_min/delta)`` to ``floor(E_max/delta)``, so
    ``m`` can exceed ``ceil(range/delta)`` by one (e.g. when the spectrum
    already lies on the grid).  ``H' <= H <= H' + delta``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    h = hermitian(h)
    w, v = eig_hermitian(h)
    lv = np.floor(w / delta + BIN_GUARD).astype(int)
    k0 = int(lv.min())
    idx = lv - k0
    m = int(idx.max()) + 1
    energies = (np.arange(m) + k0) * delta
    blocks = tuple(herm(v[:, idx == k] @ v[:, idx == k].conj().T) for k in range(m))
    return BinnedHamiltonian(h, float(delta), k0, energies, blocks, idx, v)


# --------------------------------------------------------------------------
# coherence


def coherence_modes(rho, hb: BinnedHamiltonian) -> dict[int, np.ndarray]:
    """Modes of coherence ``rho^(k delta)`` keyed by the integer ``k``.

    ``rho^(k delta) = sum_{k1 - k2 = k} P_k1 rho P_k2`` picks up the phase
    ``exp(-i k delta t)`` under the binned time evolution; only differences
    realized by occupied bins are returned.  The modes sum to ``rho``.
    """
    r = np.asarray(rho, dtype=complex)
    if r.shape != (hb.dim, hb.dim):
        raise ValueError("dimension mismatch")
    re = hb.to_eigenbasis(r)
    diff = hb.levels[:, None] - hb.levels[None, :]
    return {int(k): hb.from_eigenbasis(np.where(diff == k, re, 0)) for k in np.unique(diff)}


def mode_norms(modes: dict[int, np.ndarray]) -> dict[int, float]:
    return {k: trace_norm(x) for k, x in modes.items()}


def block_norms(rho, hb: BinnedHamiltonian) -> np.ndarray:
    """Matrix of ``||P_k rho P_k'||_1``."""
    re = hb.to_eigenbasis(rho)
    out = np.zeros((hb.m, hb.m))
    for a in range(hb.m):
        ia = hb.levels == a
        if not ia.any():
            continue
        for b in range(hb.m):
            ib = hb.levels == b
            if ib.any():
                out[a, b] = np.sum(np.linalg.svd(re[np.ix_(ia, ib)], compute_uv=False))
    return out


def time_average(rho, hb: BinnedHamiltonian, k_prime: int) -> np.ndarray:
    """Average of ``K'`` evolutions by ``exp(-2 pi i n H' / (K' delta))``, ``n < K'``."""
    if k_prime < 1:
        raise ValueError("K' must be at least 1")
    r = np.asarray(rho, dtype=complex)
    out = np.zeros_like(r)
    for n in range(k_prime):
        out += hb.evolve(r, 2 * np.pi * n / (k_prime * hb.delta))
    return herm(out / k_prime)


def dephasing_bound(rho, hb: BinnedHamiltonian, k_prime: int) -> tuple[float, float]:
    """``(D(rho_bar, pinch(rho)), m xi / 2)`` with ``xi`` the largest mode norm at ``|k| >= K'``."""
    norms = mode_norms(coherence_modes(rho, hb))
    xi = max([v for k, v in norms.items() if abs(k) >= k_prime], default=0.0)
    bar = time_average(rho, hb, k_prime)
    return trace_distance(bar, pinch(rho, hb.blocks)), 0.5 * hb.m * xi


@dataclass
class SuppressionReport:
    """Off-diagonal block norms against ``exp(-beta |E_k - E_k'| / 2 + Delta')``."""

    norms: np.ndarray
    bounds: np.ndarray
    worst_slack: float
    violations: list

    @property
    def holds(self) -> bool:
        return not self.violations


def suppression_check(rho, hb: BinnedHamiltonian, beta: float, s: float, delta_p: float,
                      tol: float = 1e-9) -> SuppressionReport:
    """Check exponential suppression of coherence between energy blocks.

    Requires ``D_max(rho || e^{-beta H'}) <= S + Delta'`` and
    ``D_{1/2}(rho || e^{-beta H'}) >= S - Delta'``; the premise is verified
    (to ``tol``) and :class:`PreconditionError` is raised if it fails.
    ``worst_slack`` is the minimum of ``bound - norm`` over all block pairs.
    """
    r = as_state(rho)
    w = hb.weight(beta)
    dmax = dv.d_max(r, w).value
    dhalf = dv.d_min_half(r, w).value
    if dmax > s + delta_p + tol or dhalf < s - delta_p - tol:
        raise PreconditionError(
            f"premise fails: D_max={dmax:.6g} vs S+D'={s + delta_p:.6g}, "
            f"D_1/2={dhalf:.6g} vs S-D'={s - delta_p:.6g}")
    norms = block_norms(r, hb)
    gap = np.abs(hb.energies[:, None] - hb.energies[None, :])
    bounds = np.exp(-beta * gap / 2 + delta_p)
    slack = bounds - norms
    viol = [(int(a), int(b)) for a, b in zip(*np.nonzero(slack < -tol))]
    return SuppressionReport(norms, bounds, float(slack.min()), viol)


@dataclass
class SmoothedCandidate:
    """Output of :func:`smoothing_candidate`.

    Attributes
    ----------
    tau : ndarray
        Normalized state ``G rho' G^H / tr``.
    s, delta_prime : float
        ``tau`` satisfies the suppression premise with these values.
    delta_in : float
        Input gap: half the distance between the smoothed max divergence
        (upper end) and the smoothed ``D_{1/2}`` candidate of ``rho``.
    distance : float
        ``D(tau, rho)``.
    """

    tau: np.ndarray
    s: float
    delta_prime: float
    delta_in: float
    distance: float
    alpha: float
    trace_g: float
    rho_prime: np.ndarray
    info: dict = field(default_factory=dict)


def _positive_part_candidate(rp, gamma, eps, iters: int = 200):
    """Feasible fallback ``F = (rho' - alpha gamma)_+`` with the smallest
    ``alpha`` (by bisection) keeping ``tr F <= 2 eps``."""
    def excess(a):
        w, v = np.linalg.eigh(herm(rp - a * gamma))
        w = np.clip(w, 0, None)
        return float(w.sum()), herm((v * w) @ v.conj().T)

    lo, hi = 0.0, float(np.exp(dv.d_max(rp, gamma).value))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if excess(mid)[0] <= 2 * eps:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-14 * hi:
            break
    return hi, excess(hi)[1]


def _relaxed_dmax(rp, gamma, eps):
    """``min alpha`` s.t. ``rho' <= alpha gamma + F``, ``F >= 0``, ``tr F <= 2 eps``."""
    n = rp.shape[0]
    if eps == 0:
        gi = inv_sqrt_on_support(gamma)
        return float(np.linalg.eigvalsh(herm(gi @ rp @ gi))[-1]), np.zeros((n, n), complex)
    # scale gamma so the optimal alpha is at most one
    lam = float(np.exp(dv.d_max(rp, gamma).value))
    p = sdp.SdpProblem("min")
    a = p.add_block(1)
    f = p.add_block(n)
    p.set_objective({a: 1.0})
    p.add_matrix_constraint([(a, lam * gamma), (f, 1.0)], ">=", rp)
    p.add_constraint({f: 1.0}, "<=", 2 * eps)
    sol = sdp.solve(p, tol=1e-9, max_iter=300)
    # (alpha, F) is repaired below, so a stalled run only costs optimality
    if not dv._usable(sol, slack=1e-5):
        return _positive_part_candidate(rp, gamma, eps)
    fm = sol.primal[f]
    w, v = np.linalg.eigh(herm(fm))
    fm = herm((v * np.clip(w, 0, None)) @ v.conj().T)
    tf = float(np.real(np.trace(fm)))
    if tf > 2 * eps:
        fm = fm * (2 * eps / tf)
    # smallest alpha making the repaired F feasible
    gi = inv_sqrt_on_support(gamma)
    alpha = float(np.linalg.eigvalsh(herm(gi @ (rp - fm) @ gi))[-1])
    return alpha, fm


def smoothing_candidate(rho, hb: BinnedHamiltonian, beta: float, eps: float) -> SmoothedCandidate:
    """Nearby state with a small gap between its max and ``D_{1/2}`` divergences.

    ``rho'`` is the smoothed-``D_{1/2}`` candidate of ``rho`` against
    ``exp(-beta H')``; ``(alpha, F)`` solve the relaxed max-divergence program
    of ``rho'`` against the normalized Gibbs state ``gamma'``; then
    ``G = gamma'^{1/2} (gamma' + pinch(F)/alpha)^{-1/2}`` and
    ``tau = G rho' G^H / tr``.  Guarantees ``D(tau, rho) <= 10 sqrt(eps)`` and
    ``delta_prime <= delta_in + ln(2m)``.
    """
    if not 0 <= eps < 0.01:
        raise ValueError("eps must lie in [0, 1/100)")
    r = as_state(rho, normalized=True)
    w = hb.weight(beta)
    z = float(np.real(np.trace(w)))
    gamma = w / z
    if eps > 0:
        half = dv.d_half_smooth(r, w, eps)
        rp = half.witness.tau
        hi = dv.d_max_smooth(r, w, eps).upper
    else:
        rp = r
        hi = dv.d_max(r, w).value
    lo = dv.d_min_half(rp, w).value
    s_in, delta_in = 0.5 * (hi + lo), 0.5 * (hi - lo)
    alpha, fm = _relaxed_dmax(rp, gamma, eps)
    x = herm(gamma + pinch(fm, hb.blocks) / alpha)
    g = sqrtm_psd(gamma) @ inv_sqrt_on_support(x)
    gr = herm(g @ rp @ g.conj().T)
    t = float(np.real(np.trace(gr)))
    tau = gr / t
    dmax_t = dv.d_max(tau, w).value
    dhalf_t = dv.d_min_half(tau, w).value
    delta_p = max(dmax_t - s_in, s_in - dhalf_t)
    return SmoothedCandidate(tau, s_in, float(delta_p), float(delta_in), trace_distance(tau, r),
                             alpha, t, rp, {"d_max": dmax_t, "d_half": dhalf_t,
                                            "guarantee": delta_in + np.log(2 * hb.m)})


# --------------------------------------------------------------------------
# thermomajorization


def _semiclassical(rho, g: GibbsSpec, tol: float = 1e-9):
    """Populations and energies of ``rho`` in a common eigenbasis with ``H``."""
    h = g.hamiltonian
    x = np.asarray(rho)
    e, v = eig_hermitian(h)
    if x.ndim == 1:
        if len(x) != len(e):
            raise ValueError("population vector has the wrong length")
        return np.asarray(x, float), e
    r = as_state(x)
    if np.max(np.abs(r @ h - h @ r)) > tol * max(1.0, np.max(np.abs(h))):
        raise PreconditionError("state is not semiclassical ([rho, H] != 0)")
    p = np.empty(len(e))
    i = 0
    scale = max(1.0, float(np.max(np.abs(e))))
    while i < len(e):
        j = i + 1
        while j < len(e) and abs(e[j] - e[i]) <= 1e-9 * scale:
            j += 1
        blk = v[:, i:j]
        p[i:j] = np.linalg.eigvalsh(herm(blk.conj().T @ r @ blk))
        i = j
    return np.clip(p, 0, None), e


@dataclass(frozen=True)
class TMCurve:
    """Piecewise-linear thermomajorization curve through ``(x, y)``."""

    x: np.ndarray
    y: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.x, self.y)


def thermomajorization_curve(rho, g: GibbsSpec) -> TMCurve:
    """Elbows ``(sum e^{-beta E_i}, sum p_i)`` in beta-order.

    The beta-order sorts levels by ``p_i e^{beta E_i}`` decreasing, which
    makes the curve concave.
    """
    p, e = _semiclassical(rho, g)
    lg = -g.beta * e
    key = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)) - lg, -np.inf)
    order = np.argsort(-key, kind="stable")
    x = np.concatenate([[0.0], np.cumsum(np.exp(lg[order]))])
    y = np.concatenate([[0.0], np.cumsum(p[order])])
    return TMCurve(x, y)


def tm_convertible(rho, rho_p, g: GibbsSpec, tol: float = 1e-12) -> bool:
    """True iff the curve of ``rho`` lies above that of ``rho_p`` everywhere.

    Both curves are concave and piecewise linear, so comparing at the elbows
    of ``rho_p`` suffices.
    """
    c1 = thermomajorization_curve(rho, g)
    c2 = thermomajorization_curve(rho_p, g)
    return bool(np.all(c1(c2.x) >= c2.y - tol))


def gibbs_stochastic_feasible(rho, rho_p, g: GibbsSpec) -> bool:
    """LP feasibility of a Gibbs-stochastic matrix ``G`` with ``G p = q``.

    ``G`` is column stochastic, nonnegative and fixes the Gibbs populations;
    ``p``, ``q`` are the populations of the semiclassical states ``rho``,
    ``rho_p`` (or population vectors in ascending-energy order).
    """
    p, e = _semiclassical(rho, g)
    q, _ = _semiclassical(rho_p, g)
    n = len(p)
    gam = np.exp(-g.beta * e - g.log_z)
    rows, rhs = [], []
    for j in range(n):  # columns sum to one
        a = np.zeros((n, n))
        a[:, j] = 1
        rows.append(a.ravel())
        rhs.append(1.0)
    for i in range(n):
        a = np.zeros((n, n))
        a[i, :] = gam
        rows.append(a.ravel())
        rhs.append(gam[i])
        a = np.zeros((n, n))
        a[i, :] = p
        rows.append(a.ravel())
        rhs.append(q[i])
    res = linprog(np.zeros(n * n), A_eq=np.array(rows), b_eq=np.array(rhs),
                  bounds=[(0, None)] * (n * n), method="highs")
    return res.status == 0


# --------------------------------------------------------------------------
# work


@dataclass(frozen=True)
class WorkResult:
    """Work value in energy units with its certified interval."""

    value: float
    lower: float
    upper: float
    direction: str


def work_of_transition(rho, g: GibbsSpec, eps: float, direction: str) -> WorkResult:
    """Work for distillation (``-D_0^eps / beta``) or formation (``D_max^eps / beta``).

    Both divergences are taken against the weight ``exp(-beta H)``.  A
    negative distillation value is work gained.
    """
    if direction == "distill":
        d = dv.d_zero_smooth(rho, g.weight, eps)
        b = g.beta
        return WorkResult(-d.value / b, -d.upper / b, -d.lower / b, direction)
    if direction == "form":
        d = dv.d_max_smooth(rho, g.weight, eps)
        b = g.beta
        return WorkResult(d.value / b, d.lower / b, d.upper / b, direction)
    raise ValueError("direction must be 'distill' or 'form'")


def curve_distillation_work(rho, g: GibbsSpec, eps: float) -> float:
    """Distillation work read off the thermomajorization curve.

    ``beta^{-1} ln x*`` with ``x*`` the smallest elbow abscissa whose
    height reaches ``1 - eps``.
    """
    c = thermomajorization_curve(rho, g)
    ok = c.y >= c.y[-1] - eps - 1e-15
    return float(np.log(c.x[np.argmax(ok)]) / g.beta)


# --------------------------------------------------------------------------
# Gibbs-preserving maps


@dataclass(frozen=True)
class GpmMap:
    """Measure-and-prepare Gibbs-preserving map.

    Attributes
    ----------
    channel : Channel
    stochastic : ndarray
        The 2x2 column-stochastic matrix ``M`` between measurement outcomes
        and prepared states.
    c, c_prime : float
        ``exp(-D_0(rho||sigma))`` and ``exp(-D_max(rho'||sigma'))``.
    """

    channel: Channel
    stochastic: np.ndarray
    c: float
    c_prime: float

    def __call__(self, x):
        return self.channel(x)


def _prepare_kraus(basis_in, weight, state):
    """Kraus operators ``sqrt(weight lambda_j) |v_j><u_a|``."""
    if weight <= 0:
        return []
    lam, vec = np.linalg.eigh(herm(state))
    lam = np.clip(lam, 0, None)
    ks = []
    for j in range(len(lam)):
        if lam[j] <= 0:
            continue
        for a in range(basis_in.shape[1]):
            ks.append(np.sqrt(weight * lam[j]) * np.outer(vec[:, j], basis_in[:, a].conj()))
    return ks


def gpm_construct(rho, sigma, rho_p, sigma_p, tol: float = 1e-12) -> GpmMap:
    """CPTP map with ``E(rho) = rho'`` and ``E(sigma) = sigma'``.

    Measures ``{P_rho, I - P_rho}``, relabels outcomes by
    ``M = [[1, 1 - r], [0, r]]`` with ``r = (1-c')/(1-c)`` and prepares
    ``rho'`` or ``sigma'' = (sigma' - c' rho')/(1 - c')``.

    Raises
    ------
    PreconditionError
        If ``c' < c``, i.e. ``D_max(rho'||sigma') > D_0(rho||sigma)``.
    """
    r = as_state(rho, "rho", normalized=True)
    s = as_state(sigma, "sigma", normalized=True)
    rp = as_state(rho_p, "rho'", normalized=True)
    sp = as_state(sigma_p, "sigma'", normalized=True)
    pr = support_projector(r)
    c = float(np.real(np.trace(pr @ s)))
    c_p = float(np.exp(-dv.d_max(rp, sp).value))
    if c_p < c - tol:
        raise PreconditionError(f"c' = {c_p:.12g} < c = {c:.12g}: D_max(rho'||sigma') > D_0(rho||sigma)")
    n = r.shape[0]
    w, v = np.linalg.eigh(pr)
    in0, in1 = v[:, w > 0.5], v[:, w <= 0.5]
    if c_p >= 1 - tol:
        # degenerate: both inputs go to rho' (= sigma' up to tol)
        m = np.array([[1.0, 1.0], [0.0, 0.0]])
        ks = _prepare_kraus(np.eye(n), 1.0, rp)
        return GpmMap(Channel(tuple(ks), True), m, c, c_p)
    ratio = (1 - c_p) / (1 - c)
    m = np.array([[1.0, 1.0 - ratio], [0.0, ratio]])
    s2 = herm((sp - c_p * rp) / (1 - c_p))
    ks = (_prepare_kraus(in0, 1.0, rp) + _prepare_kraus(in1, m[0, 1], rp)
          + _prepare_kraus(in1, m[1, 1], s2))
    return GpmMap(Channel(tuple(ks), True), m, c, c_p)


def is_gibbs_subpreserving(channel, g_in: GibbsSpec, g_out: GibbsSpec,
                           tol: float = 1e-10) -> tuple[bool, float]:
    """``(E(e^{-beta H}) <= e^{-beta H'}, slack)``; slack is the largest eigenvalue of the difference."""
    diff = herm(channel(g_in.weight) - g_out.weight)
    slack = float(np.linalg.eigvalsh(diff)[-1])
    return slack <= tol * max(1.0, float(np.max(np.abs(g_out.weight)))), slack


def random_energy_conserving_unitary(h, seed, tol: float = 1e-9) -> np.ndarray:
    """Haar-random unitary within each eigenspace of ``h``."""
    rng = rng_from_seed(seed)
    e, v = eig_hermitian(hermitian(h))
    n = len(e)
    u = np.zeros((n, n), complex)
    i = 0
    scale = max(1.0, float(np.max(np.abs(e))))
    while i < n:
        j = i + 1
        while j < n and abs(e[j] - e[i]) <= tol * scale:
            j += 1
        blk = v[:, i:j]
        u += blk @ random_unitary(j - i, rng) @ blk.conj().T
        i = j
    return u


def thermal_operation(u, h_sys, h_bath, beta: float) -> Channel:
    """``rho -> tr_B[U (rho x gamma_B) U^H]`` for an energy-conserving ``U``."""
    h_sys = hermitian(h_sys)
    h_bath = hermitian(h_bath)
    ds, db = h_sys.shape[0], h_bath.shape[0]
    h_tot = np.kron(h_sys, np.eye(db)) + np.kron(np.eye(ds), h_bath)
    u = np.asarray(u, complex)
    if np.max(np.abs(u @ h_tot - h_tot @ u)) > 1e-9 * max(1.0, np.max(np.abs(h_tot))):
        raise PreconditionError("U does not commute with the total Hamiltonian")
    gb = gibbs(h_bath, beta)
    lam, vb = np.linalg.eigh(gb.state)
    u4 = u.reshape(ds, db, ds, db)
    ks = []
    for b in range(db):
        if lam[b] <= 0:
            continue
        inb = np.einsum("ijkl,l->ijk", u4, vb[:, b])  # U (. x |b>)
        for b2 in range(db):
            k = np.sqrt(lam[b]) * np.einsum("j,ijk->ik", vb[:, b2].conj(), inb)
            ks.append(k)
    return Channel(tuple(ks), True)


# --------------------------------------------------------------------------
# energy-conserving isometries


def energy_conserving_check(v, h_in, h_out, tol: float = 1e-9) -> bool:
    """True if ``V`` is a partial isometry with ``V H_in = H_out V``."""
    v = np.asarray(v, complex)
    h_in = hermitian(h_in)
    h_out = hermitian(h_out)
    if v.shape != (h_out.shape[0], h_in.shape[0]):
        return False
    a = v.conj().T @ v
    b = v @ v.conj().T
    if np.max(np.abs(a @ a - a)) > 1e-10 or np.max(np.abs(b @ b - b)) > 1e-10:
        return False
    return bool(np.max(np.abs(v @ h_in - h_out @ v)) <= tol * max(1.0, np.max(np.abs(h_in))))


@dataclass(frozen=True)
class Dilation:
    """Energy-conserving unitary on ``K x L x W`` dilating ``V: K -> L``.

    ``V psi = (<E'|_W <f|_K) U (|i>_L |E>_W) psi`` for ``psi`` in the support
    of ``V``; ``W`` is a battery absorbing ``e_i - e_f`` (trivial when zero).
    """

    unitary: np.ndarray
    h_total: np.ndarray
    dims: tuple
    f_state: np.ndarray
    i_state: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray

    def recover(self, psi) -> np.ndarray:
        dk, dl, dw = self.dims
        x = np.kron(np.kron(np.asarray(psi, complex), self.i_state), self.w_in)
        y = (self.unitary @ x).reshape(dk, dl, dw)
        return np.einsum("k,klw,w->l", self.f_state.conj(), y, self.w_out.conj())


def dilate_isometry(v, h_in, h_out, f_index: int = 0, i_index: int = 0,
                    tol: float = 1e-9) -> Dilation:
    """Dilate an energy-conserving partial isometry into an energy-conserving unitary.

    ``|f>_K`` and ``|i>_L`` are the eigenvectors of ``h_in`` and ``h_out`` with
    indices ``f_index`` and ``i_index`` (ascending energy).  The battery is a
    two-level system with ``H_W = diag(0, e_i - e_f)`` unless ``e_i = e_f``.
    """
    v = np.asarray(v, complex)
    if not energy_conserving_check(v, h_in, h_out, tol):
        raise PreconditionError("V is not an energy-conserving partial isometry")
    h_k, h_l = hermitian(h_in), hermitian(h_out)
    ek, vk = eig_hermitian(h_k)
    el, vl = eig_hermitian(h_l)
    f, e_f = vk[:, f_index], ek[f_index]
    i_st, e_i = vl[:, i_index], el[i_index]
    shift = e_i - e_f
    if abs(shift) <= tol * max(1.0, abs(e_i), abs(e_f)):
        h_w = np.zeros((1, 1))
        w_in = w_out = np.ones(1, complex)
    else:
        h_w = np.diag([0.0, shift])
        w_in, w_out = np.array([1, 0], complex), np.array([0, 1], complex)
    dk, dl, dw = h_k.shape[0], h_l.shape[0], h_w.shape[0]
    d = dk * dl * dw
    if d > JOINT_CAP:
        raise CapError(f"joint dimension {d} exceeds {JOINT_CAP}")
    h_tot = (np.kron(np.kron(h_k, np.eye(dl)), np.eye(dw))
             + np.kron(np.kron(np.eye(dk), h_l), np.eye(dw))
             + np.kron(np.kron(np.eye(dk), np.eye(dl)), h_w))
    wop = np.einsum("a,bc,d,e,f->abecdf", f, v, i_st.conj(), w_out, w_in.conj()).reshape(d, d)
    e, basis = eig_hermitian(h_tot)
    u = np.zeros((d, d), complex)
    i = 0
    scale = max(1.0, float(np.max(np.abs(e))))
    while i < d:
        j = i + 1
        while j < d and abs(e[j] - e[i]) <= tol * scale:
            j += 1
        bg = basis[:, i:j]
        blk = bg.conj().T @ wop @ bg
        a, _, bh = np.linalg.svd(blk)
        u += bg @ (a @ bh) @ bg.conj().T
        i = j
    return Dilation(u, h_tot, (dk, dl, dw), f, i_st, w_in, w_out)


# --------------------------------------------------------------------------
# reference frame


@dataclass
class ReferenceFrameResult:
    """Post-selected reference-frame state and its deviation from ``rho``.

    ``induced`` is ``d_C <eta| D(rho x eta) |eta>`` from brute-force joint
    dephasing; ``formula`` is ``rho - sum_k (|k|/d_C) rho^(k delta)``.
    """

    induced: np.ndarray
    formula: np.ndarray
    residual: float
    deviation: float
    bound: float
    k_opt: int

    @property
    def holds(self) -> bool:
        return self.deviation <= self.bound + 1e-12


def reference_frame_postselect(rho, hb: BinnedHamiltonian, d_c: int) -> ReferenceFrameResult:
    """Induce coherence through a uniform-superposition ladder ancilla.

    The ancilla has ``H_C = sum_l l delta |l><l|`` and is prepared in
    ``|eta> = d_C^{-1/2} sum_l |l>``.  The deviation ``(1/2)||rho - induced||_1``
    is compared with ``min_K K^2/(2 d_C) + m^2 xi'(K)/2`` where ``xi'(K)`` is
    the largest ``||P_k rho P_k'||_1`` over ``|k - k'| >= K``.
    """
    if d_c < 1:
        raise ValueError("d_C must be positive")
    r = as_state(rho)
    n = hb.dim
    if n * d_c > JOINT_CAP:
        raise CapError(f"joint dimension {n * d_c} exceeds {JOINT_CAP}")
    re = hb.to_eigenbasis(r)
    eta = np.full((d_c, d_c), 1.0 / d_c, complex)
    joint = np.kron(re, eta)
    lab = (np.repeat(hb.levels, d_c) + np.tile(np.arange(d_c), n))
    joint = np.where(lab[:, None] == lab[None, :], joint, 0)
    ev = np.full(d_c, d_c**-0.5, complex)
    j4 = joint.reshape(n, d_c, n, d_c)
    post = np.einsum("l,albm,m->ab", ev.conj(), j4, ev)
    induced = herm(d_c * hb.from_eigenbasis(post))
    modes = coherence_modes(r, hb)
    formula = herm(r - sum((abs(k) / d_c) * x for k, x in modes.items()))
    residual = float(np.max(np.abs(induced - formula)))
    deviation = 0.5 * trace_norm(r - induced)
    bn = block_norms(r, hb)
    diff = np.abs(np.arange(hb.m)[:, None] - np.arange(hb.m)[None, :])
    best, k_opt = np.inf, 1
    for k in range(1, hb.m + 1):
        sel = bn[diff >= k]
        xi = float(sel.max()) if sel.size else 0.0
        b = k * k / (2 * d_c) + 0.5 * hb.m**2 * xi
        if b < best:
            best, k_opt = b, k
    return ReferenceFrameResult(induced, formula, residual, deviation, best, k_opt)


# --------------------------------------------------------------------------
# assisted processes


@dataclass(frozen=True)
class AssistedBudget:
    """Work ``w``, coherence bound ``eta`` and output error ``epsilon``."""

    w: float
    eta: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class AuditResult:
    holds: bool
    lhs: tuple
    rhs: tuple
    slack: float


def quasi_monotonicity_audit(rho, rho_p, budget: AssistedBudget, g_in: GibbsSpec,
                             g_out: GibbsSpec, xi: float, tol: float = 1e-9) -> AuditResult:
    """Check ``D_H^xi(rho) + beta(w + 2 eta) + ln((xi+eps)/xi) >= D_H^{xi+eps}(rho')``.

    Divergences are against the Gibbs weights.  The inequality counts as
    holding when the upper end of the left side reaches the lower end of the
    right side.
    """
    eps = budget.epsilon
    if not 0 < xi or xi + eps > 1:
        raise ValueError("need 0 < xi and xi + epsilon <= 1")
    if abs(g_in.beta - g_out.beta) > 1e-12:
        raise ValueError("input and output Gibbs data must share beta")
    beta = g_in.beta
    a = dv.d_hyp(rho, g_in.weight, xi)
    b = dv.d_hyp(rho_p, g_out.weight, xi + eps)
    shift = beta * (budget.w + 2 * budget.eta) + np.log((xi + eps) / xi)
    lhs = (a.lower + shift, a.value + shift, a.upper + shift)
    rhs = (b.lower, b.value, b.upper)
    slack = lhs[2] - rhs[0]
    return AuditResult(bool(slack >= -tol), lhs, rhs, float(lhs[1] - rhs[1]))
