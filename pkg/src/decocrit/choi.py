"""Vectorized density matrices on rungs of local dimension 4.

A density matrix ``rho`` on ``L`` spins maps to the vector with rung amplitudes
``<k_u, m_l | rho>> = rho[m, k]``: the upper leg carries the column (bra) index
and the lower leg the row (ket) index. For ``rho = |psi><psi|`` this is
``|psi*>_u |psi>_l``, and a channel ``sum_a K_a rho K_a^dag`` acts as
``sum_a conj(K_a)_u (x) (K_a)_l``. Global prefactors are not tracked; every
consumer takes ratios of contractions of the same vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mps import MpsError, MpsState, canonicalize, overlap, product_state, svd, truncation_rank

# unit-norm rung state (|uu> + |dd>)/sqrt(2)
T_RUNG = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0)


@dataclass(frozen=True)
class ChoiState:
    """Unnormalized vectorized density matrix stored as a ``d = 4`` MPS."""

    mps: MpsState
    L: int
    cached_self_overlap: complex | None = field(default=None, compare=False)
    cached_identity_overlap: complex | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.mps.local_dim != 4:
            raise MpsError("Choi states need local dimension 4")
        if self.mps.length != self.L:
            raise MpsError("MPS length does not match L")

    def self_overlap(self) -> complex:
        """``<<rho|rho>>``."""
        if self.cached_self_overlap is not None:
            return self.cached_self_overlap
        return overlap(self.mps, self.mps)

    def identity_overlap(self) -> complex:
        """``<<1|rho>> = Tr[rho] / 2**(L/2)`` with the unit-norm identity vector."""
        if self.cached_identity_overlap is not None:
            return self.cached_identity_overlap
        return overlap(identity_choi(self.L).mps, self.mps)

    def trace(self) -> complex:
        return self.identity_overlap() * 2.0 ** (self.L / 2)

    def with_cache(self) -> ChoiState:
        return replace(
            self,
            cached_self_overlap=overlap(self.mps, self.mps),
            cached_identity_overlap=overlap(identity_choi(self.L).mps, self.mps),
        )

    def scaled(self, factor: complex) -> ChoiState:
        return ChoiState(self.mps.scaled(factor), self.L)


def _fuse_rung(upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Rung tensor from the (conjugated) upper and the lower site tensor."""
    t = np.einsum("asc,bte->abstce", upper.conj(), lower)
    a, b, s, u, c, e = t.shape
    return t.reshape(a * b, s * u, c * e)


def double_pure(psi: MpsState) -> ChoiState:
    """``|psi*> (x) |psi>`` grouped into rungs, without any truncation.

    The bond dimension is the square of ``psi``'s; use
    :func:`double_pure_compressed` when that is too large to hold in memory.
    """
    if psi.local_dim != 2:
        raise MpsError("double_pure expects a spin-1/2 state")
    tensors = tuple(_fuse_rung(t, t) for t in psi.tensors)
    mps = MpsState(tensors, 4, psi.center, psi.chi_max, psi.sv_cutoff, psi.truncation_error)
    return ChoiState(mps, psi.length)


def double_pure_compressed(psi: MpsState, chi_max: int, sv_cutoff: float) -> ChoiState:
    """Doubled state truncated to ``chi_max`` / ``sv_cutoff`` in one right-to-left sweep.

    ``psi`` is brought into left-canonical form, which makes every doubled rung
    tensor an isometry, so the SVD at each step sees the exact Schmidt values of the
    remaining state. Rung tensors are never formed at full ``chi**2`` width: the
    contraction with the already-compressed right part is done factor by factor.
    The result has its orthogonality center on site 0.
    """
    if psi.local_dim != 2:
        raise MpsError("double_pure expects a spin-1/2 state")
    L = psi.length
    psi = canonicalize(psi, L - 1)
    out: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    discarded = psi.truncation_error
    carry = np.ones((1, 1, 1), dtype=psi.dtype)  # (c, e, k): right bonds of upper/lower copy
    for i in range(L - 1, -1, -1):
        a = psi.tensors[i]
        # M[a, b, s, t, k] = sum_{c,e} conj(A)[a,s,c] A[b,t,e] carry[c,e,k]
        x = np.tensordot(a, carry, axes=(2, 1))  # (b, t, c, k)
        m = np.tensordot(a.conj(), x, axes=(2, 2))  # (a, s, b, t, k)
        m = m.transpose(0, 2, 1, 3, 4)
        la, lb = m.shape[0], m.shape[1]
        k = m.shape[4]
        if i == 0:
            out[0] = m.reshape(1, 4, k)
            break
        u, s, vh = svd(m.reshape(la * lb, 4 * k))
        keep, disc = truncation_rank(s, chi_max, sv_cutoff)
        discarded += disc
        out[i] = vh[:keep].reshape(keep, 4, k)
        carry = (u[:, :keep] * s[:keep]).reshape(la, lb, keep)
    mps = MpsState(tuple(out), 4, 0, chi_max, sv_cutoff, discarded)
    return ChoiState(mps, L)


def identity_choi(L: int) -> ChoiState:
    """Vectorized identity: a product of unit-norm rungs ``(|uu> + |dd>)/sqrt(2)``."""
    if L < 1:
        raise MpsError("L must be positive")
    mps = product_state([T_RUNG] * L)
    return ChoiState(replace(mps, center=0), L)


def vectorize_dense(rho: np.ndarray) -> np.ndarray:
    """Dense rung-ordered vector of ``rho`` (unit prefactor)."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    L = round(np.log2(rho.shape[0]))
    if 2**L != rho.shape[0]:
        raise ValueError("dimension is not a power of two")
    # amplitude at (k_u, m_l) = rho[m, k]; interleave the legs rung by rung
    t = rho.T.reshape((2,) * (2 * L))  # axes k_0..k_{L-1}, m_0..m_{L-1}
    perm = [ax for j in range(L) for ax in (j, L + j)]
    return t.transpose(perm).reshape(-1)


def choi_from_dense(rho: np.ndarray, chi_max: int = 300, sv_cutoff: float = 1e-12) -> ChoiState:
    """Exact ChoiState of a dense density matrix (tests and oracle comparisons)."""
    from .mps import from_dense

    vec = vectorize_dense(rho)
    return ChoiState(from_dense(vec, 4, chi_max=chi_max, sv_cutoff=sv_cutoff), round(np.log2(len(rho))))
