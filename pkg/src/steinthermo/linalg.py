"""Dense Hermitian linear algebra, distances, projectors and channels.

Operators are carried as plain complex ``numpy`` arrays.  The helpers
:func:`hermitian` and :func:`as_state` enforce the invariants (Hermiticity,
positivity, trace bounds) at the boundary of every public operation, so the
rest of the package can work with ordinary arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_GUARD = 1e-12
PSD_CLAMP = 1e-10
RANK_TOL = 1e-10
TENSOR_CAP = 2**14


def _scale(a: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0


def herm(a) -> np.ndarray:
    """Symmetrize without validation, ``(A + A^H) / 2``."""
    a = np.asarray(a, dtype=complex)
    return 0.5 * (a + a.conj().T)


def hermitian(a, guard: float = HERMITIAN_GUARD) -> np.ndarray:
    """Validate and symmetrize a Hermitian matrix.

    Parameters
    ----------
    a : array_like
        Square matrix (or scalar, promoted to 1x1).
    guard : float
        Largest tolerated entrywise deviation from Hermiticity, relative to
        ``max(1, max|a_ij|)``.

    Returns
    -------
    ndarray
        ``(a + a^H) / 2`` as a complex array.

    Raises
    ------
    ValueError
        If ``a`` is not square or deviates from Hermiticity beyond the guard.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    dev = np.max(np.abs(a - a.conj().T))
    if dev > guard * _scale(a):
        raise ValueError(f"matrix is not Hermitian (deviation {dev:.3e})")
    return herm(a)


def eig_hermitian(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    Returns
    -------
    w : ndarray
        Real eigenvalues in ascending order.
    v : ndarray
        Unitary matrix whose columns are the eigenvectors, ``a = v diag(w) v^H``.
    """
    return np.linalg.eigh(hermitian(a))


def psd_eig(a, name: str = "operator") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a PSD matrix with small negative eigenvalues clamped.

    Eigenvalues in ``[-1e-10 * s, 0)`` with ``s = max(1, ||a||)`` are set to zero;
    anything more negative raises ``ValueError``.
    """
    w, v = eig_hermitian(a)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -PSD_CLAMP * scale:
        raise ValueError(f"{name} is not positive semidefinite (eigenvalue {w[0]:.3e})")
    return np.clip(w, 0.0, None), v


def as_psd(a, name: str = "operator") -> np.ndarray:
    """Validate positivity and return the clamped reconstruction."""
    w, v = psd_eig(a, name)
    return herm((v * w) @ v.conj().T)


def as_state(rho, name: str = "state", normalized: bool = False) -> np.ndarray:
    """Validate a subnormalized state (PSD with trace in (0, 1]).

    With ``normalized=True`` the trace must also equal one to 1e-10.
    """
    r = hermitian(rho)
    w = np.linalg.eigvalsh(r)
    if w[0] < -PSD_CLAMP:
        raise ValueError(f"{name} is not positive semidefinite (eigenvalue {w[0]:.3e})")
    t = float(np.real(np.trace(r)))
    if not (0.0 < t <= 1.0 + PSD_CLAMP):
        raise ValueError(f"{name} has trace {t!r}, expected (0, 1]")
    if normalized and abs(t - 1.0) > PSD_CLAMP:
        raise ValueError(f"{name} must be normalized, trace is {t!r}")
    return r


def apply_fn(a, fn, psd: bool = True) -> np.ndarray:
    """Apply a scalar function to the spectrum of a Hermitian (PSD) matrix."""
    w, v = psd_eig(a) if psd else eig_hermitian(a)
    return herm((v * fn(w)) @ v.conj().T)


def sqrtm_psd(a) -> np.ndarray:
    return apply_fn(a, np.sqrt)


def inv_sqrt_on_support(a, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Pseudo-inverse square root, inverting only above ``rank_tol * max eig``."""
    w, v = psd_eig(a)
    keep = w > rank_tol * max(w[-1], 0.0)
    f = np.zeros_like(w)
    f[keep] = 1.0 / np.sqrt(w[keep])
    return herm((v * f) @ v.conj().T)


def trace_norm(x) -> float:
    """Schatten 1-norm (sum of singular values)."""
    x = np.asarray(x, dtype=complex)
    if np.allclose(x, x.conj().T, atol=1e-14, rtol=0):
        return float(np.sum(np.abs(np.linalg.eigvalsh(herm(x)))))
    return float(np.sum(np.linalg.svd(x, compute_uv=False)))


def op_norm(x) -> float:
    """Operator norm (largest singular value)."""
    x = np.asarray(x, dtype=complex)
    return float(np.linalg.norm(x, 2)) if x.size else 0.0


def trace_distance(rho, rho2) -> float:
    """Generalized trace distance ``1/2 ||rho - rho2||_1 + 1/2 |tr rho - tr rho2|``."""
    a = hermitian(rho)
    b = hermitian(rho2)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    tr_gap = abs(float(np.real(np.trace(a) - np.trace(b))))
    return 0.5 * trace_norm(a - b) + 0.5 * tr_gap


def _sqrt_on_support(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0, None)
    return np.where(w > RANK_TOL * max(float(w.max()), 0.0), np.sqrt(w), 0.0)


def fidelity(x, y) -> float:
    """Fidelity ``F(X, Y) = || X^{1/2} Y^{1/2} ||_1`` (not squared).

    Raises
    ------
    ValueError
        If either argument has an eigenvalue below ``-1e-8``.
    """
    for arg, nm in ((x, "X"), (y, "Y")):
        w = np.linalg.eigvalsh(hermitian(arg))
        if w[0] < -1e-8:
            raise ValueError(f"{nm} is not positive semidefinite (eigenvalue {w[0]:.3e})")
    # eigenvalues below the rank tolerance are treated as exact zeros, as in support_projector
    a = apply_fn(x, _sqrt_on_support, psd=False)
    b = apply_fn(y, _sqrt_on_support, psd=False)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    return float(np.sum(np.linalg.svd(a @ b, compute_uv=False)))


def purified_distance(rho, sigma) -> float:
    """``sqrt(1 - F^2)`` for normalized states."""
    r = as_state(rho, "rho", normalized=True)
    s = as_state(sigma, "sigma", normalized=True)
    f = min(1.0, fidelity(r, s))
    return float(np.sqrt(max(0.0, 1.0 - f * f)))


def support_projector(a, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Projector onto eigenvectors with eigenvalue above ``rank_tol * max eig``."""
    w, v = psd_eig(a)
    keep = w > rank_tol * max(w[-1], 0.0)
    vk = v[:, keep]
    return herm(vk @ vk.conj().T)


def positive_part_projector(x, tol: float = 0.0) -> np.ndarray:
    """Projector onto the span of eigenvectors of ``x`` with eigenvalue >= -tol."""
    w, v = eig_hermitian(x)
    vk = v[:, w >= -tol]
    return herm(vk @ vk.conj().T)


def check_resolution(blocks: Sequence[np.ndarray], dim: int | None = None) -> None:
    """Raise ``ValueError`` unless the projectors sum to the identity."""
    if not blocks:
        raise ValueError("empty block list")
    d = blocks[0].shape[0] if dim is None else dim
    total = sum(np.asarray(p, dtype=complex) for p in blocks)
    if np.max(np.abs(total - np.eye(d))) > 1e-10:
        raise ValueError("blocks do not form a complete resolution of the identity")


def pinch(rho, blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Pinching ``sum_k P_k rho P_k`` in a complete orthogonal resolution."""
    r = hermitian(rho)
    check_resolution(blocks, r.shape[0])
    return herm(sum(p @ r @ p for p in blocks))


def tensor(*ops) -> np.ndarray:
    """Kronecker product of any number of matrices."""
    return reduce(np.kron, [np.asarray(o, dtype=complex) for o in ops])


def tensor_power(a, n: int, cap: int = TENSOR_CAP) -> np.ndarray:
    """``a^{(x) n}`` with a guard on the total dimension."""
    from .errors import CapError

    a = np.asarray(a, dtype=complex)
    if n < 1:
        raise ValueError("n must be positive")
    if a.shape[0] ** n > cap:
        raise CapError(f"tensor power dimension {a.shape[0]}^{n} exceeds cap {cap}")
    return reduce(np.kron, [a] * n)


def partial_trace(a, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep``.

    Parameters
    ----------
    a : array_like
        Operator on the tensor product of spaces with dimensions ``dims``.
    dims : sequence of int
        Subsystem dimensions.
    keep : iterable of int
        Indices of the subsystems to keep, output in ascending order.
    """
    a = np.asarray(a, dtype=complex)
    dims = [int(d) for d in dims]
    n = len(dims)
    if int(np.prod(dims)) != a.shape[0]:
        raise ValueError("dims inconsistent with operator dimension")
    keep = sorted(set(keep))
    t = a.reshape(dims + dims)
    idx = list(range(2 * n))
    for k in range(n):
        if k not in keep:
            idx[n + k] = idx[k]
    out = [k for k in keep] + [n + k for k in keep]
    dk = int(np.prod([dims[k] for k in keep])) if keep else 1
    res = np.einsum(t, idx, out) if keep else np.einsum(t, idx, [])
    return np.asarray(res).reshape(dk, dk)


@dataclass(frozen=True)
class Channel:
    """CP trace-nonincreasing map given by Kraus operators.

    Attributes
    ----------
    kraus_ops : tuple of ndarray
        Matrices of shape ``(dim_out, dim_in)``.
    trace_preserving : bool
        If true, ``sum K^H K = I`` is enforced to 1e-10.
    """

    kraus_ops: tuple = field()
    trace_preserving: bool = True

    def __post_init__(self):
        ks = tuple(np.asarray(k, dtype=complex) for k in self.kraus_ops)
        if not ks:
            raise ValueError("a channel needs at least one Kraus operator")
        shape = ks[0].shape
        if any(k.shape != shape for k in ks):
            raise ValueError("Kraus operators must share a shape")
        object.__setattr__(self, "kraus_ops", ks)
        s = sum(k.conj().T @ k for k in ks)
        w = np.linalg.eigvalsh(herm(s))
        if w[-1] > 1.0 + 1e-10:
            raise ValueError(f"sum K^H K exceeds identity (max eigenvalue {w[-1]:.12f})")
        if self.trace_preserving and np.max(np.abs(s - np.eye(shape[1]))) > 1e-10:
            raise ValueError("channel flagged trace preserving but sum K^H K != I")

    @property
    def dim_in(self) -> int:
        return self.kraus_ops[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.kraus_ops[0].shape[0]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        if x.shape != (self.dim_in, self.dim_in):
            raise ValueError(f"channel expects dim {self.dim_in}, got {x.shape}")
        return herm(sum(k @ x @ k.conj().T for k in self.kraus_ops))


def apply_channel(channel: Channel, rho) -> np.ndarray:
    """Apply a channel to a subnormalized state and validate the output."""
    r = as_state(rho)
    if r.shape[0] != channel.dim_in:
        raise ValueError(f"channel expects dim {channel.dim_in}, got {r.shape[0]}")
    return channel(r)


def identity_channel(dim: int) -> Channel:
    return Channel((np.eye(dim),), True)


def depolarizing_channel(dim: int, p: float = 1.0) -> Channel:
    """``x -> (1-p) x + p tr(x) I/d`` via the Weyl (clock and shift) operators."""
    omega = np.exp(2j * np.pi / dim)
    shift = np.roll(np.eye(dim), 1, axis=0)
    clock = np.diag(omega ** np.arange(dim))
    ks = []
    for a in range(dim):
        for b in range(dim):
            w = np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)
            coef = 1 - p + p / dim**2 if (a, b) == (0, 0) else p / dim**2
            ks.append(np.sqrt(coef) * w)
    return Channel(tuple(ks), True)


def partial_trace_channel(dims: Sequence[int], keep: Iterable[int]) -> Channel:
    """The partial trace as a Kraus channel."""
    dims = list(dims)
    keep = sorted(set(keep))
    traced = [k for k in range(len(dims)) if k not in keep]
    ks = []
    for idx in np.ndindex(*[dims[k] for k in traced]):
        factors = []
        it = iter(idx)
        for k, d in enumerate(dims):
            if k in keep:
                factors.append(np.eye(d))
            else:
                factors.append(np.eye(d)[[next(it)], :])
        ks.append(tensor(*factors))
    return Channel(tuple(ks), True)


def rng_from_seed(seed) -> np.random.Generator:
    """Generator seeded by a 64-bit unsigned integer (or passed through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.default_rng(seed)


def random_unitary(dim: int, seed) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    rng = rng_from_seed(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_hermitian(dim: int, seed) -> np.ndarray:
    rng = rng_from_seed(seed)
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return herm(z)


def random_state(dim: int, seed, rank: int | None = None, trace: float = 1.0) -> np.ndarray:
    """Random density matrix from the induced (Ginibre) measure.

    Parameters
    ----------
    dim : int
    seed : int or Generator
    rank : int, optional
        Rank of the state, full by default.
    trace : float
        Trace of the returned operator.
    """
    rng = rng_from_seed(seed)
    k = dim if rank is None else rank
    g = rng.standard_normal((dim, k)) + 1j * rng.standard_normal((dim, k))
    r = g @ g.conj().T
    return herm(trace * r / np.real(np.trace(r)))


def random_diagonal_state(dim: int, seed, rank: int | None = None) -> np.ndarray:
    rng = rng_from_seed(seed)
    p = rng.dirichlet(np.ones(dim))
    if rank is not None and rank < dim:
        p[rng.permutation(dim)[: dim - rank]] = 0.0
        p /= p.sum()
    return np.diag(p).astype(complex)


def random_channel(dim_in: int, dim_out: int, seed, n_kraus: int | None = None) -> Channel:
    """Random CPTP map from a Haar isometry ``dim_in -> dim_out * n_kraus``."""
    rng = rng_from_seed(seed)
    k = n_kraus if n_kraus is not None else max(1, dim_in)
    big = dim_out * k
    if big < dim_in:
        k = -(-dim_in // dim_out)
        big = dim_out * k
    u = random_unitary(big, rng)
    iso = u[:, :dim_in]
    ks = tuple(iso[j * dim_out:(j + 1) * dim_out, :] for j in range(k))
    return Channel(ks, True)


def matrix_to_json(a) -> dict:
    """``{"dim", "re", "im"}`` literal for a square matrix."""
    a = np.asarray(a, dtype=complex)
    return {"dim": int(a.shape[0]), "re": np.real(a).tolist(), "im": np.imag(a).tolist()}


def matrix_from_json(obj: dict) -> np.ndarray:
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
    a = re + 1j * im
    if a.shape != (obj["dim"], obj["dim"]):
        raise ValueError("matrix literal shape does not match dim")
    return a
