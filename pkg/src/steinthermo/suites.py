"""Seeded random instances and the property checks run over them.

Each generator takes a 64-bit seed and an instance index; the child seed is
derived with :class:`numpy.random.SeedSequence`, so instances are
reproducible one by one and independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import divergences as dv
from . import thermo as th
from .linalg import random_state, rng_from_seed, support_projector

ORDER_TOL = 1e-9
MONO_TOL = 1e-8

DIVERGENCES = {"D_1": dv.d_kl, "D_0": dv.d_min_zero, "D_half": dv.d_min_half, "D_max": dv.d_max}


def child_seed(seed: int, index: int) -> int:
    """Deterministic 64-bit seed for instance ``index`` of a suite."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def random_pair(seed: int, index: int, dims=(2, 8)):
    """Normalized ``rho`` of random rank and an unnormalized full-rank ``sigma``."""
    rng = rng_from_seed(child_seed(seed, index))
    d = int(rng.integers(dims[0], dims[1] + 1))
    r = random_state(d, rng, rank=int(rng.integers(1, d + 1)))
    s = random_state(d, rng) * float(rng.uniform(0.5, 2.0))
    return r, s


@dataclass(frozen=True)
class CheckRow:
    check: str
    instance: int
    link: str
    slack: float

    @property
    def passed(self) -> bool:
        return self.slack >= 0


def ordering_rows(r, s, index: int = 0) -> list[CheckRow]:
    """Slacks of ``-ln tr sigma <= D_0 <= D_half <= D_1 <= D_max`` (tolerance 1e-9)."""
    vals = [("-ln tr", -np.log(float(np.real(np.trace(s))))),
            ("D_0", dv.d_min_zero(r, s).value), ("D_half", dv.d_min_half(r, s).value),
            ("D_1", dv.d_kl(r, s).value), ("D_max", dv.d_max(r, s).value)]
    rows = []
    for (na, a), (nb, b) in zip(vals[:-1], vals[1:]):
        rows.append(CheckRow("ordering", index, f"{na}<={nb}", float(b - a + ORDER_TOL)))
    return rows


def gpm_instance(seed: int, index: int):
    """Admissible 4-level quadruple: ``rho`` of deficient rank, Gibbs ``sigma``,
    and ``sigma'`` mixed from ``rho'`` enough that ``c' >= c``."""
    rng = rng_from_seed(child_seed(seed, index))
    h = np.diag(np.sort(rng.uniform(0, 2, 4)))
    s = th.gibbs(h, 1.0).state
    r = random_state(4, rng, rank=int(rng.integers(1, 4)))
    c = float(np.real(np.trace(support_projector(r) @ s)))
    rp = random_state(4, rng)
    t = float(rng.uniform(0, 1)) * (1 - c)
    sp = (1 - t) * rp + t * random_state(4, rng)
    return r, s, rp, sp


def gpm_rows(seed: int, index: int) -> list[CheckRow]:
    """Map accuracy (1e-10), stochasticity of ``M`` and monotonicity (1e-8) for one instance."""
    r, s, rp, sp = gpm_instance(seed, index)
    g = th.gpm_construct(r, s, rp, sp)
    rows = [CheckRow("gpm", index, "E(rho)=rho'", 1e-10 - float(np.max(np.abs(g(r) - rp)))),
            CheckRow("gpm", index, "E(sigma)=sigma'", 1e-10 - float(np.max(np.abs(g(s) - sp))))]
    m = g.stochastic
    stoch = min(float(m.min()), 1e-12 - float(np.max(np.abs(m.sum(axis=0) - 1))))
    rows.append(CheckRow("gpm", index, "M stochastic", stoch))
    for name, f in DIVERGENCES.items():
        rows.append(CheckRow("monotonicity", index, name,
                             f(r, s).value - f(rp, sp).value + MONO_TOL))
    return rows


def tm_pair(seed: int, index: int):
    """Semiclassical 4-level pair; half the targets are mixed toward the Gibbs state."""
    rng = rng_from_seed(child_seed(seed, index))
    h = np.diag(rng.uniform(0, 2, 4))
    g = th.gibbs(h, 1.0)
    p = rng.dirichlet(np.ones(4))
    q = rng.dirichlet(np.ones(4))
    if index % 2:
        gp = np.real(np.diag(g.state))
        lam = float(rng.uniform())
        q = lam * p + (1 - lam) * gp
        if index % 4 == 3:
            q = 0.3 * rng.dirichlet(np.ones(4)) + 0.7 * q
    return np.diag(p), np.diag(q), g


def tm_rows(seed: int, index: int) -> list[CheckRow]:
    """Curve test and linear-programming test must agree (slack 0 or -1)."""
    p, q, g = tm_pair(seed, index)
    a = th.tm_convertible(p, q, g)
    b = th.gibbs_stochastic_feasible(p, q, g)
    return [CheckRow("thermomajorization", index, f"curve={a} lp={b}", 0.0 if a == b else -1.0)]
