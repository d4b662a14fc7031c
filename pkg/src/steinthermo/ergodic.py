"""Classical finite-alphabet translation-invariant processes on one-sided windows.

A Markov transition matrix ``P`` is stored column-stochastic, ``P[y, x] = P(y|x)``.
Marginals are enumerated exactly over ``B^n`` strings (site 1 most
significant) up to :data:`MARGINAL_CAP` atoms, in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .divergences import DivergenceResult, classical_d_hyp, classical_kl
from .errors import CapError, DegenerateError, SupportError

MARGINAL_CAP = 2**22

__all__ = [
    "FiniteProcess", "TransferGibbs", "iid", "markov", "mixture", "induced_gibbs_chain",
    "ising", "marginal", "log_marginal", "kl_rate", "relative_typical_set",
    "classical_d_hyp", "spectral_rate_scan", "nagaoka_scan", "ergodicity_diagnostic",
    "mixing_diagnostic", "gibbs_sandwich_check", "truncated_gibbs_conditional",
    "truncated_gibbs_marginal",
]


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


@dataclass(frozen=True)
class FiniteProcess:
    """Translation-invariant process on alphabet ``{0..B-1}``.

    Attributes
    ----------
    kind : {"IID", "Markov", "TransferGibbs", "Mixture"}
    alphabet : int
    transition : ndarray or None
        Column-stochastic ``P[y, x] = P(y|x)`` (IID processes carry ``p`` in
        every column).
    stationary : ndarray or None
    components, weights : tuple
        Mixture data.
    """

    kind: str
    alphabet: int
    transition: np.ndarray | None = None
    stationary: np.ndarray | None = None
    components: tuple = ()
    weights: tuple = ()

    @property
    def is_markov(self) -> bool:
        return self.kind != "Mixture"

    def describe(self) -> dict:
        d = {"kind": self.kind, "alphabet": self.alphabet}
        if self.is_markov:
            d["transition"] = np.round(self.transition, 15).tolist()
        else:
            d["weights"] = list(self.weights)
            d["components"] = [c.describe() for c in self.components]
        return d


@dataclass(frozen=True)
class TransferGibbs(FiniteProcess):
    """Infinite-volume Gibbs chain of a symmetric nearest-neighbour coupling.

    ``T[x, y] = exp(-beta h(x, y))`` has top eigenpair ``(e^{lambda*}, v)``;
    ``P(y|x) = v_y T[x, y] / (e^{lambda*} v_x)`` and ``pi(x) ∝ v_x^2``.
    """

    coupling: np.ndarray | None = None
    beta: float = 1.0
    transfer: np.ndarray | None = None
    top_log_eigenvalue: float = 0.0
    top_eigenvector: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None

    @property
    def free_energy_density(self) -> float:
        return -self.top_log_eigenvalue / self.beta


def _stationary(p: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(p)
    i = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, i])
    pi = pi / pi.sum()
    return pi


def _irreducible(p: np.ndarray) -> bool:
    b = p.shape[0]
    adj = (p > 0).T  # adj[x, y]: x -> y
    for start in range(b):
        seen = np.zeros(b, bool)
        seen[start] = True
        frontier = [start]
        while frontier:
            nxt = []
            for x in frontier:
                for y in np.nonzero(adj[x])[0]:
                    if not seen[y]:
                        seen[y] = True
                        nxt.append(int(y))
            frontier = nxt
        if not seen.all():
            return False
    return True


def iid(p) -> FiniteProcess:
    """I.i.d. process with single-site distribution ``p``."""
    p = np.asarray(p, float)
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
        raise ValueError("p must be a probability vector")
    b = len(p)
    return FiniteProcess("IID", b, np.tile(p[:, None], (1, b)), p.copy())


def markov(p, stationary=None) -> FiniteProcess:
    """Stationary Markov chain with column-stochastic ``P[y, x] = P(y|x)``.

    Raises ``ValueError`` if the columns do not sum to one, the chain is
    reducible, or a supplied stationary vector is not fixed to 1e-12.
    """
    p = np.asarray(p, float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(p < 0) or np.max(np.abs(p.sum(axis=0) - 1)) > 1e-12:
        raise ValueError("transition columns must be probability vectors")
    if not _irreducible(p):
        raise ValueError("transition matrix is reducible")
    pi = _stationary(p) if stationary is None else np.asarray(stationary, float)
    if np.max(np.abs(p @ pi - pi)) > 1e-12 or abs(pi.sum() - 1) > 1e-12:
        raise ValueError("stationary vector is not fixed by the chain")
    return FiniteProcess("Markov", p.shape[0], p, pi)


def mixture(components: Sequence[FiniteProcess], weights) -> FiniteProcess:
    """Convex combination ``sum_k r_k P_k`` of processes on the same alphabet."""
    w = np.asarray(weights, float)
    if len(components) != len(w) or not len(w):
        raise ValueError("need one weight per component")
    if np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
        raise ValueError("weights must be positive and sum to one")
    b = components[0].alphabet
    if any(c.alphabet != b for c in components):
        raise ValueError("components must share an alphabet")
    return FiniteProcess("Mixture", b, components=tuple(components), weights=tuple(float(x) for x in w))


def induced_gibbs_chain(h, beta: float, gap_tol: float = 1e-9) -> TransferGibbs:
    """Markov chain of the infinite-volume Gibbs state of coupling ``h``.

    Raises
    ------
    DegenerateError
        If the top eigenvalue of the transfer matrix is degenerate.
    """
    h = np.asarray(h, float)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or not np.array_equal(h, h.T):
        raise ValueError("coupling must be a symmetric square table")
    if beta <= 0:
        raise ValueError("beta must be positive")
    t = np.exp(-beta * h)
    w, v = np.linalg.eigh(t)
    top = w[-1]
    if len(w) > 1 and top - np.max(np.abs(w[:-1])) < gap_tol * top:
        raise DegenerateError("top eigenvalue of the transfer matrix is degenerate")
    vec = v[:, -1] * np.sign(v[:, -1].sum())
    p = (vec[:, None] * t) / (top * vec[None, :])  # P[y, x] = v_y T[x, y] / (top v_x)
    p = p / p.sum(axis=0, keepdims=True)
    pi = vec**2 / np.sum(vec**2)
    return TransferGibbs("TransferGibbs", len(vec), p, pi, coupling=h, beta=float(beta), transfer=t,
                         top_log_eigenvalue=float(np.log(top)), top_eigenvector=vec,
                         eigenvalues=w[::-1].copy())


def ising(beta: float, j: float = 1.0, field_: float = 0.0) -> TransferGibbs:
    """Binary Ising chain ``h(x, y) = -J s_x s_y - f (s_x + s_y)/2`` with spins ``s = (+1, -1)``."""
    s = np.array([1.0, -1.0])
    h = -j * np.outer(s, s) - field_ * (s[:, None] + s[None, :]) / 2
    return induced_gibbs_chain(h, beta)


def truncated_gibbs_conditional(h, beta: float, ell: int, n: int = 0) -> np.ndarray:
    """``sigma_trunc(x_n | x_{n-1})`` of the chain on sites ``-ell..ell+1``.

    Equals ``<x_n|T^{ell-n}|1> T[x_{n-1}, x_n] / <x_{n-1}|T^{ell-n+1}|1>``,
    returned column-stochastic.
    """
    t = np.exp(-beta * np.asarray(h, float))
    one = np.ones(t.shape[0])
    a = np.linalg.matrix_power(t, ell - n) @ one
    b = np.linalg.matrix_power(t, ell - n + 1) @ one
    return (a[:, None] * t.T) / b[None, :]


def truncated_gibbs_marginal(h, beta: float, ell: int, n: int) -> np.ndarray:
    """Marginal on sites ``1..n`` of the truncated chain on ``-ell..ell+1``, by contraction."""
    t = np.exp(-beta * np.asarray(h, float))
    b = t.shape[0]
    one = np.ones(b)
    left = one @ np.linalg.matrix_power(t, ell + 1)      # sites -ell..0 summed into site 1
    right = np.linalg.matrix_power(t, ell + 1 - n) @ one  # sites n+1..ell+1
    out = left
    for _ in range(n - 1):
        out = (out.reshape(-1, b)[:, :, None] * t[None, :, :]).reshape(-1)
    out = out.reshape(-1, b) * right[None, :]
    z = one @ np.linalg.matrix_power(t, 2 * ell + 1) @ one
    return out.reshape(-1) / z


def _check_size(b: int, n: int):
    if n < 1:
        raise ValueError("window length must be positive")
    if float(b) ** n > MARGINAL_CAP:
        raise CapError(f"{b}^{n} atoms exceed the cap {MARGINAL_CAP}")


def log_marginal(proc: FiniteProcess, n: int) -> np.ndarray:
    """Log-probabilities of all ``B^n`` strings of the window ``[1..n]``."""
    b = proc.alphabet
    _check_size(b, n)
    if proc.kind == "Mixture":
        parts = [np.log(w) + log_marginal(c, n) for c, w in zip(proc.components, proc.weights)]
        return logsumexp(np.stack(parts), axis=0)
    lp_t = _log(proc.transition).T  # lp_t[x, y] = ln P(y|x)
    lm = _log(proc.stationary)
    for _ in range(n - 1):
        last = np.arange(lm.size) % b
        lm = (lm[:, None] + lp_t[last, :]).reshape(-1)
    return lm


def marginal(proc: FiniteProcess, n: int) -> np.ndarray:
    """Distribution over ``B^n`` strings (site 1 most significant)."""
    return np.exp(log_marginal(proc, n))


def kl_rate(rho: FiniteProcess, sigma: FiniteProcess) -> float:
    """Relative entropy rate of ``rho`` with respect to a Markov/IID ``sigma``.

    ``sum_x pi(x) sum_y rho(y|x) ln[rho(y|x)/sigma(y|x)]``; for a mixture
    ``rho`` the rate is the weighted average of the component rates.
    """
    if not sigma.is_markov:
        raise ValueError("sigma must be Markov or IID")
    if rho.alphabet != sigma.alphabet:
        raise ValueError("alphabet mismatch")
    if rho.kind == "Mixture":
        return float(sum(w * kl_rate(c, sigma) for c, w in zip(rho.components, rho.weights)))
    pr, ps = rho.transition, sigma.transition
    if np.any((pr > 0) & (ps <= 0)):
        raise SupportError("rho(y|x) > 0 where sigma(y|x) = 0")
    tot = 0.0
    for x in range(rho.alphabet):
        if rho.stationary[x] > 0:
            tot += rho.stationary[x] * classical_kl(pr[:, x], _log(ps[:, x]))
    return float(tot)


@dataclass
class TypicalSet:
    """Relative typical set ``Q_n`` and the three conditions with slacks."""

    mask: np.ndarray
    n: int
    epsilon: float
    rate: float
    rho_mass: float
    log_sigma_mass: float
    conditions: dict

    @property
    def holds(self) -> bool:
        return all(self.conditions.values())


def relative_typical_set(rho: FiniteProcess, sigma: FiniteProcess, n: int, eps: float,
                         rate: float | None = None) -> TypicalSet:
    """``Q_n = {x : n(D - eps) <= ln rho_n(x)/sigma_n(x) <= n(D + eps)}``.

    Condition (a) holds by construction; (b) is ``rho[Q_n] > 1 - eps`` and
    (c) is ``(1-eps) e^{-n(D+eps)} < sigma[Q_n] < e^{-n(D-eps)}``.
    """
    d = kl_rate(rho, sigma) if rate is None else rate
    lr = log_marginal(rho, n)
    ls = log_marginal(sigma, n)
    pos = np.isfinite(lr)
    if np.any(pos & ~np.isfinite(ls)):
        raise SupportError("rho_n is not absolutely continuous with respect to sigma_n")
    llr = np.where(pos, lr - np.where(np.isfinite(ls), ls, 0.0), -np.inf)
    mask = pos & (llr >= n * (d - eps)) & (llr <= n * (d + eps))
    rho_mass = float(np.exp(logsumexp(lr[mask]))) if mask.any() else 0.0
    ls_mass = float(logsumexp(ls[mask])) if mask.any() else -np.inf
    conds = {
        "a": True,
        "b": rho_mass > 1 - eps,
        "c": (np.log1p(-eps) - n * (d + eps) < ls_mass < -n * (d - eps)) if mask.any() else False,
    }
    return TypicalSet(mask, n, eps, d, rho_mass, ls_mass, conds)


def typicality_threshold(rho: FiniteProcess, sigma: FiniteProcess, eps: float,
                         ns: Sequence[int]) -> int | None:
    """Smallest ``n`` in ``ns`` from which all three conditions hold for every larger listed ``n``."""
    ok = [relative_typical_set(rho, sigma, n, eps).holds for n in ns]
    thr = None
    for n, o in zip(reversed(list(ns)), reversed(ok)):
        if not o:
            break
        thr = n
    return thr


@dataclass(frozen=True)
class RateRow:
    n: int
    eta: float
    value: float
    lower: float
    upper: float
    kl: float


def spectral_rate_scan(rho: FiniteProcess, sigma: FiniteProcess, etas: Sequence[float],
                       ns: Sequence[int]) -> list[RateRow]:
    """Rows ``(n, eta, (1/n) D_H^eta(rho_n||sigma_n))`` with the KL rate for reference."""
    kl = kl_rate(rho, sigma) if sigma.is_markov else float("nan")
    rows = []
    for n in ns:
        lr = log_marginal(rho, n)
        ls = log_marginal(sigma, n)
        p = np.exp(lr)
        for eta in etas:
            r = classical_d_hyp(p, None, eta, log_q=ls)
            rows.append(RateRow(int(n), float(eta), r.value / n, r.lower / n, r.upper / n, kl))
    return rows


def nagaoka_scan(rho: FiniteProcess, sigma: FiniteProcess, a_grid: Sequence[float],
                 ns: Sequence[int]) -> list[tuple[int, float, float]]:
    """``(n, a, tr[Proj{rho_n - e^{na} sigma_n >= 0} rho_n])`` over a grid of ``a``."""
    out = []
    for n in ns:
        lr = log_marginal(rho, n)
        ls = log_marginal(sigma, n)
        pos = np.isfinite(lr)
        llr = lr[pos] - ls[pos]
        p = np.exp(lr[pos])
        order = np.argsort(-llr, kind="stable")
        llr_s, cp = llr[order], np.cumsum(p[order])
        for a in a_grid:
            k = int(np.searchsorted(-llr_s, -n * a, side="right"))
            out.append((int(n), float(a), float(cp[k - 1]) if k else 0.0))
    return out


def _two_point(proc: FiniteProcess, a, b, d: int) -> float:
    """``E[A(x_0) B(x_d)]``."""
    if proc.kind == "Mixture":
        return float(sum(w * _two_point(c, a, b, d) for c, w in zip(proc.components, proc.weights)))
    pd = np.linalg.matrix_power(proc.transition, d)  # pd[y, x] = P(x_d = y | x_0 = x)
    return float(np.einsum("x,x,yx,y->", proc.stationary, a, pd, b))


def _mean(proc: FiniteProcess, a) -> float:
    if proc.kind == "Mixture":
        return float(sum(w * _mean(c, a) for c, w in zip(proc.components, proc.weights)))
    return float(proc.stationary @ a)


def ergodicity_diagnostic(proc: FiniteProcess, a, m: int) -> float:
    """Variance of the shift average of a single-site observable over ``2m+1`` sites.

    ``E[(N^{-1} sum_i A(x_i))^2] - (E A)^2`` with ``N = 2m+1``, computed
    exactly from two-point functions.
    """
    a = np.asarray(a, float)
    if a.shape != (proc.alphabet,):
        raise ValueError("observable table must have one entry per letter")
    n = 2 * m + 1
    mu = _mean(proc, a)
    tot = n * _two_point(proc, a, a, 0)
    for d in range(1, n):
        tot += 2 * (n - d) * _two_point(proc, a, a, d)
    return float(tot / n**2 - mu**2)


@dataclass
class MixingTable:
    shifts: np.ndarray
    values: np.ndarray
    ratio: float
    mixing: bool


def mixing_diagnostic(proc: FiniteProcess, a, b, max_shift: int, tol: float = 1e-12) -> MixingTable:
    """``|E[A(x_0) B(x_m)] - E A E B|`` for ``m = 1..max_shift``.

    ``ratio`` is the geometric-mean ratio of consecutive nonzero values;
    ``mixing`` is false when correlations neither vanish nor decay.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ea, eb = _mean(proc, a), _mean(proc, b)
    shifts = np.arange(1, max_shift + 1)
    vals = np.array([abs(_two_point(proc, a, b, int(m)) - ea * eb) for m in shifts])
    nz = vals > tol
    if nz.sum() >= 2:
        v = vals[nz]
        ratio = float(np.exp(np.mean(np.diff(np.log(v)))))
    else:
        ratio = 0.0
    mixing = bool(vals[-1] <= tol or ratio < 1 - 1e-9)
    return MixingTable(shifts, vals, ratio, mixing)


def gibbs_sandwich_check(h, beta: float, m: int, k: int) -> tuple[float, float]:
    """Best ``(alpha_1, alpha_2)`` with ``a1^{k-1} s_m^{xk} <= s_{km} <= a2^{k-1} s_m^{xk}``.

    ``s_n`` is the marginal of the infinite-volume Gibbs chain; the bounds are
    found by an exhaustive entrywise ratio scan over ``B^{km}`` strings.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    chain = induced_gibbs_chain(h, beta)
    b = chain.alphabet
    _check_size(b, k * m)
    big = log_marginal(chain, k * m)
    small = log_marginal(chain, m)
    prod = small
    for _ in range(k - 1):
        prod = (prod[:, None] + small[None, :]).reshape(-1)
    lr = (big - prod) / (k - 1)
    return float(np.exp(lr.min())), float(np.exp(lr.max()))
