"""Typical projectors, the W-operator test, quantum rate scans and a toy counterexample.

Projectors on ``n`` copies that are diagonal in a product basis ``U^{⊗n}`` are
held as a :class:`ProductProjector` (a site basis plus a mask over the
``d^n`` basis strings), so traces against product states never need the
dense operator.  Qubit tensor powers are block-diagonalized by Schur-Weyl
duality: ``A^{⊗n} = ⊕_k det(A)^k Sym^{n-2k}(A) ⊗ I_{m_k}`` with
``m_k = C(n,k) - C(n,k-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .divergences import (classical_d_hyp, classical_d_max_smooth, classical_d_zero_smooth,
                          classical_kl, d_hyp, d_kl, neyman_pearson)
from .errors import CapError
from .linalg import (as_state, eig_hermitian, herm, inv_sqrt_on_support, support_projector,
                     tensor_power)
from .thermo import gibbs

PROJECTOR_CAP = 2**14
DENSE_CAP = 2**11
DENSE_SCAN_CAP = 2**10
ROUNDOFF = 1e-12

__all__ = [
    "ProductProjector", "TypicalityReport", "RateRow", "ToyRow", "sym_power", "qubit_blocks",
    "iid_typical_projector", "relative_typical_projector", "product_weights",
    "build_and_verify_W", "quantum_rate_scan", "toy_counterexample",
]


def _string_logs(site_logs: np.ndarray, n: int) -> np.ndarray:
    """``sum_i site_logs[x_i]`` over all ``d^n`` strings, site 1 most significant."""
    out = np.zeros(1)
    for _ in range(n):
        out = (out[:, None] + site_logs[None, :]).reshape(-1)
    return out


@dataclass
class ProductProjector:
    """Projector ``U^{⊗n} diag(mask) U^{†⊗n}``.

    Attributes
    ----------
    basis : ndarray
        Site unitary whose columns are the single-site basis vectors.
    n : int
    mask : ndarray of bool
        Kept basis strings, length ``d^n``.
    """

    basis: np.ndarray
    n: int
    mask: np.ndarray

    @property
    def site_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.site_dim**self.n

    @property
    def rank(self) -> int:
        return int(self.mask.sum())

    def expectation(self, site_state) -> float:
        """``tr[Pi tau^{⊗n}]`` for a single-site operator ``tau``."""
        t = np.asarray(site_state, complex)
        diag = np.real(np.einsum("ia,ij,ja->a", self.basis.conj(), t, self.basis))
        with np.errstate(divide="ignore"):
            logs = np.log(np.clip(diag, 0, None))
        vals = np.exp(_string_logs(logs, self.n))
        return float(vals[self.mask].sum())

    def dense(self) -> np.ndarray:
        if self.dim > DENSE_CAP:
            raise CapError(f"dense projector of dimension {self.dim} exceeds {DENSE_CAP}")
        u = tensor_power(self.basis, self.n)
        cols = u[:, self.mask]
        return cols @ cols.conj().T


def _window_mask(logs: np.ndarray, n: int, centre: float, eps: float) -> np.ndarray:
    rate = -logs / n
    return np.isfinite(rate) & (rate >= centre - eps) & (rate <= centre + eps)


def _assert_sandwich(logs, mask, n, centre, eps):
    kept = -logs[mask] / n
    if kept.size and (kept.min() < centre - eps or kept.max() > centre + eps):
        raise AssertionError("typical-projector sandwich violated")


def iid_typical_projector(rho, n: int, eps: float) -> ProductProjector:
    """Eigenvectors of ``rho^{⊗n}`` whose eigenvalue satisfies ``-(1/n) ln lambda ∈ [s-eps, s+eps]``.

    ``s`` is the von Neumann entropy of ``rho``.  The sandwich
    ``e^{-n(s+eps)} Pi <= Pi rho_n Pi <= e^{-n(s-eps)} Pi`` holds by
    construction and is asserted.

    Examples
    --------
    >>> p = iid_typical_projector(np.eye(2) / 2, 3, 0.1)
    >>> p.rank
    8
    """
    r = as_state(rho)
    d = r.shape[0]
    if float(d) ** n > PROJECTOR_CAP:
        raise CapError(f"{d}^{n} exceeds the projector cap {PROJECTOR_CAP}")
    w, v = eig_hermitian(r)
    w = np.clip(w, 0, None)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    pos = w > 0
    s = float(-np.sum(w[pos] * lw[pos]))
    logs = _string_logs(lw, n)
    mask = _window_mask(logs, n, s, eps)
    _assert_sandwich(logs, mask, n, s, eps)
    return ProductProjector(v, n, mask)


def product_weights(sigma, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Site eigenbasis and eigenvalues of ``sigma^{⊗n}`` over basis strings."""
    w, v = eig_hermitian(np.asarray(sigma, complex))
    w = np.clip(w, 0, None)
    with np.errstate(divide="ignore"):
        logs = _string_logs(np.log(w), n)
    return v, np.exp(logs)


def relative_typical_projector(sigma_n, n: int, eps: float, m_target: float, basis=None):
    """``Proj{-(1/n) ln sigma_n ∈ [m-eps, m+eps]}``.

    Parameters
    ----------
    sigma_n : ndarray
        Either a weight vector over the ``d^n`` strings of the product basis
        ``basis^{⊗n}`` (identity if omitted), or a dense operator.
    n, eps, m_target : see above.

    Returns
    -------
    ProductProjector or ndarray
        Structured projector for weight input, dense projector otherwise.
    """
    s = np.asarray(sigma_n)
    if s.ndim == 1:
        d = int(round(s.size ** (1 / n)))
        if d**n != s.size:
            raise ValueError("weight vector length must be d^n")
        if s.size > PROJECTOR_CAP:
            raise CapError(f"{s.size} exceeds the projector cap {PROJECTOR_CAP}")
        with np.errstate(divide="ignore"):
            logs = np.log(np.clip(s.real, 0, None))
        mask = _window_mask(logs, n, m_target, eps)
        _assert_sandwich(logs, mask, n, m_target, eps)
        u = np.eye(d, dtype=complex) if basis is None else np.asarray(basis, complex)
        return ProductProjector(u, n, mask)
    if s.shape[0] > DENSE_CAP:
        raise CapError(f"dense dimension {s.shape[0]} exceeds {DENSE_CAP}")
    w, v = eig_hermitian(s)
    with np.errstate(divide="ignore"):
        logs = np.log(np.clip(w, 0, None))
    mask = _window_mask(logs, n, m_target, eps)
    _assert_sandwich(logs, mask, n, m_target, eps)
    cols = v[:, mask]
    return cols @ cols.conj().T


@dataclass
class TypicalityReport:
    """Conditions (1)-(4) for ``W = Pi_rho Pi_rel`` with measured slacks.

    ``slacks['2']`` and ``slacks['3']`` are in nats (log domain); a slack
    whose magnitude is below the roundoff floor is recorded as zero.
    """

    n: int
    epsilon: float
    c: float
    traces: dict
    dims: dict
    slacks: dict
    condition_flags: dict
    trace_floor: float
    eta: float
    bounds: dict = field(default_factory=dict)
    pair_bound: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return all(self.condition_flags.values())

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, dict):
                return {k: clean(v) for k, v in sorted(x.items())}
            if isinstance(x, (bool, np.bool_)):
                return bool(x)
            if isinstance(x, (float, np.floating)):
                return float(x) if np.isfinite(x) else str(float(x))
            return x
        return clean({"n": self.n, "epsilon": self.epsilon, "c": self.c, "traces": self.traces,
                      "dims": self.dims, "slacks": self.slacks, "condition_flags": self.condition_flags,
                      "trace_floor": self.trace_floor, "eta": self.eta, "bounds": self.bounds,
                      "pair_bound": self.pair_bound})


def _floor(x: float, scale: float = 1.0) -> float:
    return 0.0 if abs(x) <= ROUNDOFF * max(1.0, abs(scale)) else float(x)


def _dense(p) -> np.ndarray:
    return p.dense() if isinstance(p, ProductProjector) else np.asarray(p, complex)


def build_and_verify_W(rho_n, sigma_n, pi_rho, pi_rel, c: float, eps: float, n: int | None = None,
                       trace_floor: float = 0.85, eta: float = 0.5) -> TypicalityReport:
    """Evaluate the four W-operator conditions for ``W = Pi_rho Pi_rel``.

    (1) ``W†W <= I``; (2) ``tr[W sigma W†] <= e^{-n(c-2eps)}``;
    (3) ``W† rho W <= e^{n(c+2eps)} sigma``; (4) ``Re tr[W rho] >= trace_floor``.
    A failed condition is reported, never raised.  The primal candidate
    ``Q = W†W`` and the dual candidate ``mu = e^{-n(c+2eps)}/2``,
    ``X = 2 mu (I-W†) rho (I-W)`` are evaluated exactly and give two-sided
    bounds on ``(1/n) D_H^eta``.
    """
    r = np.asarray(rho_n, complex)
    s = np.asarray(sigma_n, complex)
    dim = r.shape[0]
    if n is None:
        for cand in (pi_rho, pi_rel):
            if isinstance(cand, ProductProjector):
                n = cand.n
        if n is None:
            raise ValueError("n is required when projectors are dense")
    pr, pl = _dense(pi_rho), _dense(pi_rel)
    w = pr @ pl
    eye = np.eye(dim)
    q = w.conj().T @ w
    wrw = herm(w.conj().T @ r @ w)

    s1 = _floor(1.0 - float(np.linalg.eigvalsh(herm(q))[-1]))
    tsig = float(np.real(np.trace(w @ s @ w.conj().T)))
    s2 = np.inf if tsig <= 0 else _floor(-n * (c - 2 * eps) - np.log(tsig), n * abs(c) + 1)
    # condition (3): W† rho W must live on supp sigma, then compare in sigma^{-1/2} frame
    isq = inv_sqrt_on_support(herm(s))
    supp = support_projector(herm(s))
    off = (eye - supp) @ wrw @ (eye - supp)
    if np.real(np.trace(off)) > 1e-12:
        s3 = -np.inf
    else:
        top = float(np.linalg.eigvalsh(herm(isq @ wrw @ isq))[-1])
        s3 = np.inf if top <= 0 else _floor(n * (c + 2 * eps) - np.log(top), n * abs(c) + 1)
    re_tr = float(np.real(np.trace(w @ r)))
    s4 = re_tr - trace_floor
    slacks = {"1": s1, "2": s2, "3": s3, "4": s4}
    flags = {k: bool(v >= 0) for k, v in slacks.items()}

    t_rho = float(np.real(np.trace(pr @ r)))
    t_rel = float(np.real(np.trace(pl @ r)))
    traces = {"pi_rho": t_rho, "pi_rel": t_rel, "w": re_tr}
    dims = {"pi_rho": float(np.real(np.trace(pr))), "pi_rel": float(np.real(np.trace(pl)))}
    ea, eb = max(0.0, 1 - t_rho), max(0.0, 1 - t_rel)
    pair = {"value": re_tr, "bound": 1 - ea - np.sqrt(eb),
            "holds": bool(re_tr >= 1 - ea - np.sqrt(eb) - 1e-12)}

    bounds = {"lemma_lower": c - 2 * eps + np.log(eta) / n,
              "lemma_upper": c + 2 * eps + np.log(4) / n}
    tq = float(np.real(np.trace(q @ r)))
    if tq >= eta:
        bounds["primal_lower"] = -np.log(float(np.real(np.trace(q @ s))) / eta) / n
    mu = np.exp(-n * (c + 2 * eps)) / 2
    rest = herm((eye - w.conj().T) @ r @ (eye - w))
    x = 2 * mu * rest
    val = mu - float(np.real(np.trace(x))) / eta
    feas = float(np.linalg.eigvalsh(herm(s + x - mu * r))[0])
    bounds["dual_feasible"] = bool(feas >= -1e-12 * max(1.0, mu))
    bounds["residual_trace"] = float(np.real(np.trace(rest)))
    if val > 0 and bounds["dual_feasible"]:
        bounds["dual_upper"] = -np.log(val) / n
    return TypicalityReport(int(n), float(eps), float(c), traces, dims, slacks, flags,
                            float(trace_floor), float(eta), bounds, pair)


# --------------------------------------------------------------------------
# Schur-Weyl blocks for qubits


def sym_power(a, d: int) -> np.ndarray:
    """Action of ``a^{⊗d}`` on the symmetric subspace in the orthonormal Dicke basis."""
    a = np.asarray(a, complex)
    if d == 0:
        return np.ones((1, 1), complex)
    x_col = np.array([a[0, 0], a[0, 1]])  # coefficients of x, y in X = a x + b y
    y_col = np.array([a[1, 0], a[1, 1]])
    m = np.zeros((d + 1, d + 1), complex)
    for i in range(d + 1):
        poly = np.ones(1, complex)
        for _ in range(d - i):
            poly = npoly.polymul(poly, x_col)
        for _ in range(i):
            poly = npoly.polymul(poly, y_col)
        m[i, : len(poly)] = poly
    c = np.sqrt([comb(d, j) for j in range(d + 1)])
    return (c[:, None] * m) / c[None, :]


def qubit_blocks(a, n: int) -> list[tuple[np.ndarray, int]]:
    """``[(det(a)^k Sym^{n-2k}(a), C(n,k) - C(n,k-1))]`` for ``k = 0..n//2``."""
    a = np.asarray(a, complex)
    if a.shape != (2, 2):
        raise ValueError("qubit operator required")
    det = np.linalg.det(a)
    out = []
    for k in range(n // 2 + 1):
        mult = comb(n, k) - (comb(n, k - 1) if k else 0)
        out.append((det**k * sym_power(a, n - 2 * k), mult))
    return out


@dataclass(frozen=True)
class RateRow:
    n: int
    eta: float
    rate: float
    lower: float
    upper: float
    kl: float


def _commute(a, b) -> bool:
    return float(np.max(np.abs(a @ b - b @ a))) <= 1e-12


def quantum_rate_scan(rho, h, beta: float, etas: Sequence[float], ns: Sequence[int]) -> list[RateRow]:
    """Rows ``(n, eta, (1/n) D_H^eta(rho^{⊗n} || gamma^{⊗n}), lower, upper, D(rho||gamma))``.

    ``gamma`` is the normalized Gibbs state of the site Hamiltonian.  Commuting
    inputs use the exact classical test; qubits use Schur-Weyl blocks; other
    inputs are evaluated densely up to :data:`DENSE_SCAN_CAP`.
    """
    r = as_state(rho)
    g = gibbs(h, beta).state
    d = r.shape[0]
    kl = d_kl(r, g).value
    rows = []
    for n in ns:
        if _commute(r, g):
            w, v = eig_hermitian(g)
            pr = np.real(np.diag(v.conj().T @ r @ v))
            if float(d) ** n > 2**22:
                raise CapError(f"{d}^{n} atoms exceed the classical cap")
            with np.errstate(divide="ignore"):
                lp = _string_logs(np.log(np.clip(pr, 0, None)), n)
                lq = _string_logs(np.log(np.clip(w, 0, None)), n)
            p = np.exp(lp)
            for eta in etas:
                res = classical_d_hyp(p, None, eta, log_q=lq)
                rows.append(RateRow(int(n), float(eta), res.value / n, res.lower / n, res.upper / n, kl))
            continue
        if d == 2:
            rb = qubit_blocks(r, n)
            sb = qubit_blocks(g, n)
            blocks = [(herm(a), herm(b), m) for (a, m), (b, _) in zip(rb, sb)]
            for eta in etas:
                res = neyman_pearson(blocks, eta)
                val = -np.log(res.primal)
                up = -np.log(res.dual) if res.dual > 0 else np.inf
                rows.append(RateRow(int(n), float(eta), val / n, val / n, max(up, val) / n, kl))
            continue
        if float(d) ** n > DENSE_SCAN_CAP:
            raise CapError(f"{d}^{n} exceeds the dense scan cap {DENSE_SCAN_CAP}")
        rn, gn = tensor_power(r, n), tensor_power(g, n)
        for eta in etas:
            res = d_hyp(rn, gn, eta, crosscheck=False)
            rows.append(RateRow(int(n), float(eta), res.value / n, res.lower / n, res.upper / n, kl))
    return rows


@dataclass(frozen=True)
class ToyRow:
    n: int
    kl: float
    d_zero: float
    d_zero_upper: float
    d_max: float


def toy_counterexample(beta: float, ns: Sequence[int], eps: float = 0.1) -> list[ToyRow]:
    """Smoothed rates collapse to zero while the KL rate tends to ``beta``.

    ``rho_n = (1/n)|1><1| + (1-1/n)|0><0|`` against the Gibbs weight
    ``e^{-beta H_n}`` with ``H_n = n^2 |1><1|``, evaluated in the log domain
    (the weight of ``|1>`` underflows for moderate ``n``).  Columns are
    ``(1/n) D_KL``, the best subset value of ``(1/n) D_0^eps`` with its upper
    bound ``(1/n)[D_H^{1-eps} - ln(1-eps)]``, and ``(1/n) D_max^eps``.
    """
    out = []
    for n in ns:
        e = 1.0 / n
        p = np.array([1 - e, e])
        lq = np.array([0.0, -beta * n / e])
        kl = classical_kl(p, lq)
        dz, _ = classical_d_zero_smooth(p, lq, eps)
        dz_up = float(classical_d_hyp(p, None, 1 - eps, log_q=lq).upper - np.log(1 - eps))
        dm = classical_d_max_smooth(p, lq, eps)
        # + 0.0 folds negative zero
        out.append(ToyRow(int(n), kl / n + 0.0, dz / n + 0.0, dz_up / n + 0.0, dm / n + 0.0))
    return out
