"""Small dense semidefinite-program solver.

Problems are stated over a list of Hermitian PSD variable blocks with scalar
linear constraints ``sum_b Re tr(A_b X_b)  {<=, =, >=}  rhs``.  Blocks of
dimension one behave as nonnegative scalars.  Matrix-valued constraints are
expanded into scalar ones through an orthonormal Hermitian basis by
:meth:`SdpProblem.add_matrix_constraint`.

The solver is a primal-dual interior-point method with Nesterov-Todd scaling
and a Mehrotra predictor-corrector, run on the homogeneous self-dual
embedding so that infeasible and unbounded problems terminate with a
certificate instead of stalling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla

from .linalg import herm, matrix_from_json, matrix_to_json

MAX_TOTAL_DIM = 128
SINCE_BEST = 30  # iterations without a new best merit before giving up
RELATIONS = ("<=", "=", ">=")


@dataclass
class Constraint:
    terms: dict  # block index -> Hermitian coefficient matrix
    relation: str
    rhs: float
    label: str = ""


@dataclass
class SdpProblem:
    """A block SDP ``min/max sum_b Re tr(C_b X_b)`` subject to scalar constraints.

    Examples
    --------
    >>> p = SdpProblem(sense="min")
    >>> x = p.add_block(1)
    >>> p.set_objective({x: 1.0})
    >>> p.add_constraint({x: 1.0}, ">=", 2.0)
    0
    >>> round(solve(p).value, 6)
    2.0
    """

    sense: str = "min"
    blocks: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")

    def add_block(self, dim: int) -> int:
        if dim < 1:
            raise ValueError("block dimension must be positive")
        self.blocks.append(int(dim))
        return len(self.blocks) - 1

    def _coef(self, b: int, c) -> np.ndarray:
        n = self.blocks[b]
        c = np.asarray(c, dtype=complex)
        if c.ndim == 0:
            c = c * np.eye(n)
        if c.shape != (n, n):
            raise ValueError(f"coefficient shape {c.shape} does not match block {b} of dim {n}")
        if np.max(np.abs(c - c.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(c))):
            raise ValueError("coefficient matrices must be Hermitian")
        return herm(c)

    def set_objective(self, terms: dict) -> None:
        """Objective ``sum_b Re tr(C_b X_b)``; a scalar coefficient means ``c I``."""
        self.objective = {int(b): self._coef(b, c) for b, c in terms.items()}

    def add_constraint(self, terms: dict, relation: str, rhs: float, label: str = "") -> int:
        """Add ``sum_b Re tr(A_b X_b) relation rhs``; returns the constraint index."""
        if relation not in RELATIONS:
            raise ValueError(f"relation must be one of {RELATIONS}")
        t = {int(b): self._coef(b, c) for b, c in terms.items()}
        self.constraints.append(Constraint(t, relation, float(rhs), label))
        return len(self.constraints) - 1

    def add_matrix_constraint(self, terms: list, relation: str, rhs, label: str = "") -> list:
        """Add an operator constraint ``sum_t L_t(X) relation R``.

        Parameters
        ----------
        terms : list of (block, coef)
            ``coef`` is a real scalar ``c`` (contributing ``c X_b``, block of the
            constraint dimension), an ``n x n`` Hermitian matrix ``M`` for a 1x1
            block (contributing ``x_b M``), or ``("congruence", K)`` contributing
            ``K X_b K^H``.
        relation : {"<=", "=", ">="}
            Inequalities are in the Loewner order and add a PSD slack block.
        rhs : array_like
            Hermitian right-hand side ``R``.

        Returns
        -------
        list of int
            Indices of the generated scalar constraints.
        """
        r = herm(np.asarray(rhs, dtype=complex))
        n = r.shape[0]
        terms = list(terms)
        if relation == "<=":
            terms.append((self.add_block(n), 1.0))
        elif relation == ">=":
            terms.append((self.add_block(n), -1.0))
        elif relation != "=":
            raise ValueError(f"relation must be one of {RELATIONS}")
        idx = []
        for e in hermitian_basis(n):
            coefs = {}
            for b, c in terms:
                if isinstance(c, tuple) and c[0] == "congruence":
                    k = np.asarray(c[1], dtype=complex)
                    a = k.conj().T @ e @ k
                elif np.ndim(c) == 0:
                    if self.blocks[b] != n:
                        raise ValueError("scalar term needs a block of the constraint dimension")
                    a = float(np.real(c)) * e
                else:
                    if self.blocks[b] != 1:
                        raise ValueError("matrix coefficient needs a 1x1 block")
                    a = np.array([[np.real(np.vdot(e, np.asarray(c, dtype=complex)))]])
                coefs[b] = coefs.get(b, 0) + a
            rhs_k = float(np.real(np.vdot(e, r)))
            idx.append(self.add_constraint(coefs, "=", rhs_k, label))
        return idx

    def total_dim(self) -> int:
        return int(sum(self.blocks))

    def to_json(self) -> str:
        obj = {
            "sense": self.sense,
            "blocks": self.blocks,
            "objective": {str(b): matrix_to_json(c) for b, c in sorted(self.objective.items())},
            "constraints": [
                {
                    "terms": {str(b): matrix_to_json(c) for b, c in sorted(k.terms.items())},
                    "relation": k.relation,
                    "rhs": k.rhs,
                    "label": k.label,
                }
                for k in self.constraints
            ],
        }
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SdpProblem":
        obj = json.loads(text)
        p = cls(sense=obj["sense"])
        for d in obj["blocks"]:
            p.add_block(d)
        p.set_objective({int(b): matrix_from_json(c) for b, c in obj["objective"].items()})
        for k in obj["constraints"]:
            p.add_constraint(
                {int(b): matrix_from_json(c) for b, c in k["terms"].items()},
                k["relation"], k["rhs"], k.get("label", ""),
            )
        return p


def hermitian_basis(n: int) -> list:
    """Orthonormal basis of ``n x n`` Hermitian matrices for ``Re tr(A^H B)``."""
    out = []
    for p in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[p, p] = 1.0
        out.append(e)
    s = 1.0 / np.sqrt(2.0)
    for p in range(n):
        for q in range(p + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[p, q] = e[q, p] = s
            out.append(e)
            f = np.zeros((n, n), dtype=complex)
            f[p, q] = -1j * s
            f[q, p] = 1j * s
            out.append(f)
    return out


@dataclass
class SdpSolution:
    """Result of :func:`solve`.

    ``value`` and ``dual_value`` are in the sense of the user problem; for a
    minimization ``value >= dual_value`` up to the residuals, and ``gap`` is
    ``value - dual_value`` (sign flipped for maximization) so it is
    nonnegative whenever weak duality is respected.
    """

    status: str
    value: float
    dual_value: float
    gap: float
    primal: list
    dual: np.ndarray
    residuals: dict
    iterations: int
    certificate: Any = None

    def to_json(self) -> str:
        return json.dumps({
            "status": self.status,
            "value": self.value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "primal": [matrix_to_json(x) for x in self.primal],
            "dual": [float(v) for v in self.dual],
            "residuals": self.residuals,
            "iterations": self.iterations,
        }, sort_keys=True)


class _Standard:
    """Standard form ``min <C,X>  s.t.  A(X) = b,  X in cone`` with scaling."""

    def __init__(self, p: SdpProblem):
        self.p = p
        nb = len(p.blocks)
        self.lp_of = {}
        self.dense_of = {}
        for b, d in enumerate(p.blocks):
            if d == 1:
                self.lp_of[b] = len(self.lp_of)
            else:
                self.dense_of[b] = len(self.dense_of)
        self.n_user_lp = len(self.lp_of)
        n_slack = sum(1 for k in p.constraints if k.relation != "=")
        self.n_lp = self.n_user_lp + n_slack
        self.dims = [p.blocks[b] for b in self.dense_of]
        m = len(p.constraints)
        self.m = m
        self.A_lp = np.zeros((m, self.n_lp))
        self.A = [np.zeros((m, d, d), dtype=complex) for d in self.dims]
        self.b = np.array([k.rhs for k in p.constraints], dtype=float)
        slack = self.n_user_lp
        for i, k in enumerate(p.constraints):
            for bl, c in k.terms.items():
                if bl in self.lp_of:
                    self.A_lp[i, self.lp_of[bl]] += float(np.real(c[0, 0]))
                else:
                    self.A[self.dense_of[bl]][i] += c
            if k.relation == "<=":
                self.A_lp[i, slack] = 1.0
                slack += 1
            elif k.relation == ">=":
                self.A_lp[i, slack] = -1.0
                slack += 1
        sign = 1.0 if p.sense == "min" else -1.0
        self.c_lp = np.zeros(self.n_lp)
        self.C = [np.zeros((d, d), dtype=complex) for d in self.dims]
        for bl, c in p.objective.items():
            if bl in self.lp_of:
                self.c_lp[self.lp_of[bl]] = sign * float(np.real(c[0, 0]))
            else:
                self.C[self.dense_of[bl]] = sign * c
        _ = nb
        # row and data scaling
        norms = np.sqrt(np.sum(self.A_lp**2, axis=1)
                        + sum(np.sum(np.abs(a) ** 2, axis=(1, 2)) for a in self.A))
        norms[norms == 0] = 1.0
        self.row_scale = norms
        self.A_lp = self.A_lp / norms[:, None]
        self.A = [a / norms[:, None, None] for a in self.A]
        self.b = self.b / norms
        self.b_scale = max(1.0, float(np.linalg.norm(self.b)))
        self.c_scale = max(1.0, float(np.sqrt(np.sum(self.c_lp**2)
                                              + sum(np.sum(np.abs(c) ** 2) for c in self.C))))
        self.b = self.b / self.b_scale
        self.c_lp = self.c_lp / self.c_scale
        self.C = [c / self.c_scale for c in self.C]
        self.Aflat = [a.reshape(m, -1) for a in self.A]

    def op(self, X, x):
        out = self.A_lp @ x
        for af, xb in zip(self.Aflat, X):
            out = out + np.real(af.conj() @ xb.reshape(-1))
        return out

    def adj(self, y):
        dense = [herm(np.tensordot(y, a, axes=(0, 0))) for a in self.A]
        return dense, self.A_lp.T @ y

    def cdot(self, X, x):
        return float(self.c_lp @ x + sum(np.real(np.vdot(c, xb)) for c, xb in zip(self.C, X)))


def _ip(a, b) -> float:
    return float(np.real(np.vdot(a, b)))


def _sqrt_psd(a):
    w, v = np.linalg.eigh(herm(a))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def _max_step(lam, dtil) -> float:
    """Largest alpha with ``diag(lam) + alpha * dtil`` PSD."""
    s = 1.0 / np.sqrt(lam)
    m = herm(s[:, None] * dtil * s[None, :])
    w = np.linalg.eigvalsh(m)[0]
    return np.inf if w >= 0 else -1.0 / w


def _finite(parts) -> bool:
    for p in parts:
        if isinstance(p, list):
            if not all(np.all(np.isfinite(a)) for a in p):
                return False
        elif not np.all(np.isfinite(p)):
            return False
    return True


def solve(problem: SdpProblem, tol: float = 1e-8, max_iter: int = 200,
          max_total_dim: int = MAX_TOTAL_DIM, verbose: bool = False,
          gap_floor: float = 1.0) -> SdpSolution:
    """Solve a block SDP by a homogeneous self-dual interior-point method.

    Parameters
    ----------
    problem : SdpProblem
    tol : float
        Target for the relative primal and dual residuals and the relative gap.
    max_iter : int
    max_total_dim : int
        Guard on the total dimension of the user blocks.
    verbose : bool
        Print one line of residuals per iteration.
    gap_floor : float
        The relative gap is ``|p - d| / (gap_floor + |p| + |d|)``; zero makes it
        purely relative, which matters when the optimal value is tiny.

    Returns
    -------
    SdpSolution
        ``status`` is one of ``Optimal``, ``Infeasible`` (primal infeasible,
        ``certificate`` holds the dual ray ``y``), ``Unbounded`` (dual
        infeasible, ``certificate`` holds the primal ray) or ``MaxIterations``
        (best iterate, with its true residuals).
    """
    user_dim = sum(d for d in problem.blocks)
    if user_dim > max_total_dim:
        raise ValueError(f"total variable dimension {user_dim} exceeds cap {max_total_dim}")
    sf = _Standard(problem)
    m = sf.m
    X = [np.eye(d, dtype=complex) for d in sf.dims]
    S = [np.eye(d, dtype=complex) for d in sf.dims]
    x = np.ones(sf.n_lp)
    s = np.ones(sf.n_lp)
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0
    nu = sum(sf.dims) + sf.n_lp + 1
    b, C, c = sf.b, sf.C, sf.c_lp
    normb = 1.0 + np.linalg.norm(b)
    normc = 1.0 + np.sqrt(np.sum(c**2) + sum(np.sum(np.abs(cc) ** 2) for cc in C))
    status = "MaxIterations"
    cert = None
    it = 0
    stall = 0
    best = (np.inf,)
    since_best = 0

    def residuals(X, x, y, S, s, tau):
        AX = sf.op(X, x)
        Ay, Ay_lp = sf.adj(y)
        pres = np.linalg.norm(AX / tau - b) / normb
        dres = np.sqrt(sum(np.sum(np.abs(a + ss - tau * cc) ** 2) for a, ss, cc in zip(Ay, S, C))
                       + np.sum((Ay_lp + s - tau * c) ** 2)) / tau / normc
        pobj = sf.cdot(X, x) / tau
        dobj = float(b @ y) / tau
        gap = abs(pobj - dobj) / max(gap_floor + abs(pobj) + abs(dobj), 1e-300)
        return pres, dres, gap, pobj, dobj

    for it in range(1, max_iter + 1):
        AX = sf.op(X, x)
        Ay, Ay_lp = sf.adj(y)
        rp = tau * b - AX
        Rd = [tau * cc - a - ss for cc, a, ss in zip(C, Ay, S)]
        rd = tau * c - Ay_lp - s
        cx = sf.cdot(X, x)
        by = float(b @ y)
        rg = by - cx - kappa
        mu = (sum(_ip(xx, ss) for xx, ss in zip(X, S)) + x @ s + tau * kappa) / nu

        pres, dres, gap, pobj, dobj = residuals(X, x, y, S, s, tau)
        if verbose:
            print(f"{it:3d} pres={pres:.2e} dres={dres:.2e} gap={gap:.2e} mu={mu:.2e} "
                  f"tau={tau:.2e} kappa={kappa:.2e} pobj={pobj:.10g} dobj={dobj:.10g}")
        merit = max(pres, dres, gap)
        if merit < best[0]:
            best = (merit, [xx.copy() for xx in X], x.copy(), y.copy(), [ss.copy() for ss in S],
                    s.copy(), tau, it)
            since_best = 0
        else:
            since_best += 1
        if merit <= tol:
            status = "Optimal"
            break
        # infeasibility certificates (in the unnormalized embedding)
        ray_d = np.sqrt(sum(np.sum(np.abs(a + ss) ** 2) for a, ss in zip(Ay, S))
                        + np.sum((Ay_lp + s) ** 2))
        if by > 0 and ray_d / by <= tol and tau < 1e-6 * kappa:
            status, cert = "Infeasible", y / by
            break
        if cx < 0 and np.linalg.norm(AX) / (-cx) <= tol and tau < 1e-6 * kappa:
            status, cert = "Unbounded", [xx / (-cx) for xx in X]
            break
        if mu <= 1e-30 or stall >= 8 or since_best >= SINCE_BEST or not np.isfinite(mu):
            break

        # Nesterov-Todd scaling
        G, lam, V = [], [], []
        for xx, ss in zip(X, S):
            xh = _sqrt_psd(xx)
            sh = _sqrt_psd(ss)
            u_, sig, wh = np.linalg.svd(sh @ xh)
            sig = np.maximum(sig, 1e-300)
            g = xh @ wh.conj().T * (sig ** -0.5)[None, :]
            G.append(g)
            lam.append(sig)
            V.append(g @ g.conj().T)
        vlp = x / s

        # Schur complement and auxiliary vectors
        Mmat = (sf.A_lp * vlp[None, :]) @ sf.A_lp.T
        u = sf.A_lp @ (vlp * c)
        cvc = float(c @ (vlp * c))
        for af, a, vv, cc in zip(sf.Aflat, sf.A, V, C):
            T = (vv[None] @ a @ vv[None]).reshape(m, -1)
            Mmat += np.real(af.conj() @ T.T)
            vcv = vv @ cc @ vv
            u += np.real(af.conj() @ vcv.reshape(-1))
            cvc += _ip(cc, vcv)
        Mmat = 0.5 * (Mmat + Mmat.T)
        try:
            fac = sla.cho_factor(Mmat + 1e-14 * np.trace(Mmat) / max(m, 1) * np.eye(m))
            msolve = lambda r: sla.cho_solve(fac, r)  # noqa: E731
        except (np.linalg.LinAlgError, sla.LinAlgError):
            pinv = np.linalg.pinv(Mmat, rcond=1e-13)
            msolve = lambda r: pinv @ r  # noqa: E731
        up, um = u + b, u - b
        m_up = msolve(up)
        den = float(um @ m_up) - (cvc + kappa / tau)

        def direction(eta, rhs_dense, rhs_lp, rtk):
            rhat = [2.0 * r / (l[:, None] + l[None, :]) for r, l in zip(rhs_dense, lam)]
            grg = [g @ rh @ g.conj().T for g, rh in zip(G, rhat)]
            xr_lp = rhs_lp / s
            vrv = [vv @ (eta * r) @ vv for vv, r in zip(V, Rd)]
            vr_lp = vlp * eta * rd
            r1 = eta * rp - sf.op(grg, xr_lp) + sf.op(vrv, vr_lp)
            r2 = (eta * rg - sf.cdot(grg, xr_lp) + sf.cdot(vrv, vr_lp) - rtk / tau)
            m_r1 = msolve(r1)
            dtau = (r2 - float(um @ m_r1)) / den
            dy = m_r1 + m_up * dtau
            ad, ad_lp = sf.adj(dy)
            dS = [herm(eta * r + cc * dtau - a) for r, cc, a in zip(Rd, C, ad)]
            ds = eta * rd + c * dtau - ad_lp
            dX = [herm(gr - vv @ d @ vv) for gr, vv, d in zip(grg, V, dS)]
            dx = xr_lp - vlp * ds
            dkap = (rtk - kappa * dtau) / tau
            stil = [g.conj().T @ d @ g for g, d in zip(G, dS)]
            xtil = [rh - st for rh, st in zip(rhat, stil)]
            return dX, dx, dy, dS, ds, dtau, dkap, xtil, stil

        def step_len(xtil, stil, dx, ds, dtau, dkap):
            a = np.inf
            for l, xt, st in zip(lam, xtil, stil):
                a = min(a, _max_step(l, xt), _max_step(l, st))
            for v, dv in ((x, dx), (s, ds), (np.array([tau]), np.array([dtau])),
                          (np.array([kappa]), np.array([dkap]))):
                neg = dv < 0
                if np.any(neg):
                    a = min(a, float(np.min(-v[neg] / dv[neg])))
            return a

        if not np.isfinite(den) or den == 0.0:
            break
        # predictor
        rhs_d = [-np.diag(l**2).astype(complex) for l in lam]
        aff = direction(1.0, rhs_d, -x * s, -tau * kappa)
        dXa, dxa, _, dSa, dsa, dta, dka, xta, sta = aff
        if not _finite(aff):
            break
        alpha_a = min(1.0, step_len(xta, sta, dxa, dsa, dta, dka))
        mu_aff = (sum(_ip(np.diag(l) + alpha_a * xt, np.diag(l) + alpha_a * st)
                      for l, xt, st in zip(lam, xta, sta))
                  + (x + alpha_a * dxa) @ (s + alpha_a * dsa)
                  + (tau + alpha_a * dta) * (kappa + alpha_a * dka)) / nu
        sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0))

        # corrector
        rhs_d = [sigma * mu * np.eye(len(l)) - np.diag(l**2) - 0.5 * (xt @ st + st @ xt)
                 for l, xt, st in zip(lam, xta, sta)]
        rhs_lp = sigma * mu - x * s - dxa * dsa
        rtk = sigma * mu - tau * kappa - dta * dka
        cor = direction(1.0 - sigma, rhs_d, rhs_lp, rtk)
        if not _finite(cor):
            break
        dX, dx, dy, dS, ds, dtau, dkap, xtil, stil = cor
        alpha = min(1.0, 0.98 * step_len(xtil, stil, dx, ds, dtau, dkap))
        stall = stall + 1 if alpha < 1e-8 else 0

        X = [herm(xx + alpha * d) for xx, d in zip(X, dX)]
        S = [herm(ss + alpha * d) for ss, d in zip(S, dS)]
        x = x + alpha * dx
        s = s + alpha * ds
        y = y + alpha * dy
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkap

    if status == "MaxIterations" and len(best) > 1:
        X, x, y, S, s, tau = best[1:7]
        if best[0] <= tol:
            status = "Optimal"
    pres, dres, gap, pobj, dobj = residuals(X, x, y, S, s, tau)
    return _package(problem, sf, status, X, x, y, tau, pres, dres, gap, pobj, dobj, it, cert)


def _package(p, sf, status, X, x, y, tau, pres, dres, gap, pobj, dobj, it, cert):
    scale = sf.b_scale * sf.c_scale
    sign = 1.0 if p.sense == "min" else -1.0
    primal = []
    for bl, d in enumerate(p.blocks):
        if bl in sf.lp_of:
            primal.append(np.array([[x[sf.lp_of[bl]] / tau * sf.b_scale]], dtype=complex))
        else:
            primal.append(X[sf.dense_of[bl]] / tau * sf.b_scale)
    dual = y / tau * sf.c_scale / sf.row_scale
    value = sign * pobj * scale
    dual_value = sign * dobj * scale
    return SdpSolution(
        status=status,
        value=float(value),
        dual_value=float(dual_value),
        gap=float(sign * (value - dual_value)),
        primal=primal,
        dual=dual,
        residuals={"primal": float(pres), "dual": float(dres), "gap": float(gap)},
        iterations=it,
        certificate=cert,
    )
