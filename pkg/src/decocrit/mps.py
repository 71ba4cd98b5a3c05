"""Finite open-chain matrix product states.

Tensors are stored with index order (left bond, physical, right bond). States are
treated as immutable: every operation returns a new :class:`MpsState` and never
writes into the arrays of its input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

DEFAULT_CHI_MAX = 300
DEFAULT_SV_CUTOFF = 1e-6
# relative width of a degenerate group of singular values
TIE_TOL = 1e-12


class MpsError(ValueError):
    """Raised for malformed states or out-of-range site indices."""


@dataclass(frozen=True)
class MpsState:
    """Open-chain MPS with canonical-center bookkeeping.

    Attributes:
        tensors: Rank-3 arrays ``(chi_left, d, chi_right)``.
        local_dim: Physical dimension ``d`` shared by all sites.
        center: Orthogonality center, or ``None`` when no gauge is known.
        chi_max: Bond dimension cap used by truncating operations.
        sv_cutoff: Singular values below ``sv_cutoff * ||s||`` are discarded.
        truncation_error: Accumulated discarded weight of all truncations that
            produced this state.
    """

    tensors: tuple[np.ndarray, ...]
    local_dim: int
    center: int | None = None
    chi_max: int = DEFAULT_CHI_MAX
    sv_cutoff: float = DEFAULT_SV_CUTOFF
    truncation_error: float = 0.0

    def __post_init__(self) -> None:
        tensors = tuple(self.tensors)
        object.__setattr__(self, "tensors", tensors)
        if not tensors:
            raise MpsError("an MPS needs at least one site")
        if tensors[0].shape[0] != 1 or tensors[-1].shape[2] != 1:
            raise MpsError("boundary bonds must have dimension 1")
        for i, t in enumerate(tensors):
            if t.ndim != 3 or t.shape[1] != self.local_dim:
                raise MpsError(f"site {i}: bad tensor shape {t.shape}")
            if i and tensors[i - 1].shape[2] != t.shape[0]:
                raise MpsError(f"bond mismatch between sites {i - 1} and {i}")
        if self.center is not None and not 0 <= self.center < len(tensors):
            raise MpsError(f"center {self.center} out of range")

    @property
    def length(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def dtype(self) -> np.dtype:
        return np.result_type(*self.tensors)

    def with_settings(self, chi_max: int | None = None, sv_cutoff: float | None = None) -> MpsState:
        return replace(
            self,
            chi_max=self.chi_max if chi_max is None else chi_max,
            sv_cutoff=self.sv_cutoff if sv_cutoff is None else sv_cutoff,
        )

    def scaled(self, factor: complex) -> MpsState:
        """Return ``factor * |self>``; the factor is absorbed into the center tensor."""
        site = 0 if self.center is None else self.center
        tensors = list(self.tensors)
        tensors[site] = tensors[site] * factor
        return replace(self, tensors=tuple(tensors))


@dataclass(frozen=True)
class LocalOperator:
    """A one- or two-site operator acting on ``span`` consecutive sites.

    For ``span == 2`` the matrix rows/columns are ordered as ``s_i * d + s_j``
    (``numpy.kron`` convention, first site most significant).
    """

    matrix: np.ndarray
    span: int = field(default=1)

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix)
        object.__setattr__(self, "matrix", m)
        if self.span not in (1, 2):
            raise MpsError("span must be 1 or 2")
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise MpsError("operator matrix must be square")
        d = round(m.shape[0] ** (1.0 / self.span))
        if d**self.span != m.shape[0]:
            raise MpsError(f"matrix of size {m.shape[0]} does not fit span {self.span}")

    @property
    def local_dim(self) -> int:
        return round(self.matrix.shape[0] ** (1.0 / self.span))


# --------------------------------------------------------------------------- constructors


def product_state(
    vectors: Sequence[np.ndarray],
    chi_max: int = DEFAULT_CHI_MAX,
    sv_cutoff: float = DEFAULT_SV_CUTOFF,
) -> MpsState:
    """Product state from one local vector per site (bond dimension 1)."""
    vecs = [np.asarray(v) for v in vectors]
    d = vecs[0].shape[0]
    tensors = tuple(v.reshape(1, d, 1) for v in vecs)
    return MpsState(tensors, d, center=None, chi_max=chi_max, sv_cutoff=sv_cutoff)


def basis_state(
    bits: Sequence[int],
    local_dim: int = 2,
    dtype=np.complex128,
    chi_max: int = DEFAULT_CHI_MAX,
    sv_cutoff: float = DEFAULT_SV_CUTOFF,
) -> MpsState:
    vecs = []
    for b in bits:
        v = np.zeros(local_dim, dtype=dtype)
        v[b] = 1.0
        vecs.append(v)
    state = product_state(vecs, chi_max=chi_max, sv_cutoff=sv_cutoff)
    return replace(state, center=0)


def random_mps(
    length: int,
    local_dim: int,
    chi: int,
    seed: int | None = None,
    dtype=np.complex128,
    chi_max: int = DEFAULT_CHI_MAX,
    sv_cutoff: float = DEFAULT_SV_CUTOFF,
) -> MpsState:
    """Seeded random MPS with bond dimensions ``min(chi, d**k, d**(L-k))``, unnormalized."""
    rng = np.random.default_rng(seed)
    dims = [1]
    for k in range(1, length):
        dims.append(min(chi, local_dim**k, local_dim ** (length - k)))
    dims.append(1)
    tensors = []
    for k in range(length):
        shape = (dims[k], local_dim, dims[k + 1])
        t = rng.standard_normal(shape)
        if np.issubdtype(np.dtype(dtype), np.complexfloating):
            t = t + 1j * rng.standard_normal(shape)
        tensors.append(t.astype(dtype))
    return MpsState(tuple(tensors), local_dim, None, chi_max, sv_cutoff)


# --------------------------------------------------------------------------- linear algebra


def svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD, falling back to the slower but more robust ``gesvd`` driver."""
    try:
        return np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError:
        logger.debug("gesdd failed on %s matrix, retrying with gesvd", matrix.shape)
        return scipy.linalg.svd(matrix, full_matrices=False, lapack_driver="gesvd")


def truncation_rank(s: np.ndarray, chi_max: int, sv_cutoff: float) -> tuple[int, float]:
    """Number of singular values to keep and the discarded weight.

    ``s`` must be sorted in descending order. Values below ``sv_cutoff`` relative to
    ``||s||`` are dropped and at most ``chi_max`` are kept. A group of values
    degenerate (within ``TIE_TOL``) with the smallest kept one is kept or dropped as
    a whole, so the cut never splits a multiplet; if keeping the group would exceed
    ``chi_max`` the group is dropped.
    """
    n = len(s)
    total = float(np.sum(np.abs(s) ** 2))
    if total == 0.0 or n == 0:
        return min(1, n), 0.0
    rel = s / np.sqrt(total)
    keep = int(np.count_nonzero(rel >= sv_cutoff))
    keep = max(1, min(keep, chi_max))
    if keep < n:
        smallest = rel[keep - 1]
        end = keep
        while end < n and rel[end] >= smallest - TIE_TOL:
            end += 1
        if end > chi_max:
            start = keep - 1
            while start > 0 and rel[start - 1] <= smallest + TIE_TOL:
                start -= 1
            keep = start if start > 0 else chi_max
        else:
            keep = end
    discarded = float(np.sum(np.abs(s[keep:]) ** 2)) / total
    return keep, discarded


def _left_qr(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    l, d, r = t.shape
    q, rmat = np.linalg.qr(t.reshape(l * d, r))
    return q.reshape(l, d, q.shape[1]), rmat


def _right_qr(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    l, d, r = t.shape
    q, rmat = np.linalg.qr(t.reshape(l, d * r).T)
    return q.T.reshape(q.shape[1], d, r), rmat.T


# --------------------------------------------------------------------------- gauge


def canonicalize(state: MpsState, center: int) -> MpsState:
    """Mixed-canonical form with orthogonality center ``center``.

    Uses QR decompositions only, so the represented vector is preserved exactly.
    """
    L = state.length
    if not 0 <= center < L:
        raise MpsError(f"center {center} out of range for length {L}")
    tensors = list(state.tensors)
    if state.center is None:
        lo, hi = 0, L - 1
    else:
        lo = hi = state.center
        if center == state.center:
            return state
    # sweep right up to center
    for k in range(lo, center):
        q, r = _left_qr(tensors[k])
        tensors[k] = q
        tensors[k + 1] = np.tensordot(r, tensors[k + 1], axes=(1, 0))
    for k in range(hi, center, -1):
        q, r = _right_qr(tensors[k])
        tensors[k] = q
        tensors[k - 1] = np.tensordot(tensors[k - 1], r, axes=(2, 0))
    return replace(state, tensors=tuple(tensors), center=center)


def is_canonical(state: MpsState, center: int, atol: float = 1e-10) -> bool:
    """Check left/right orthonormality of all tensors around ``center``."""
    for k, t in enumerate(state.tensors):
        if k < center:
            g = np.tensordot(t.conj(), t, axes=([0, 1], [0, 1]))
        elif k > center:
            g = np.tensordot(t.conj(), t, axes=([1, 2], [1, 2]))
        else:
            continue
        if not np.allclose(g, np.eye(g.shape[0]), atol=atol):
            return False
    return True


def norm(state: MpsState) -> float:
    if state.center is not None:
        return float(np.linalg.norm(state.tensors[state.center]))
    return float(np.sqrt(abs(overlap(state, state))))


def normalize(state: MpsState) -> MpsState:
    """Canonicalize (if needed) and scale to unit norm."""
    if state.center is None:
        state = canonicalize(state, 0)
    n = norm(state)
    if n == 0.0:
        raise MpsError("cannot normalize the zero vector")
    return state.scaled(1.0 / n)


# --------------------------------------------------------------------------- gates


def _check_site(state: MpsState, site: int) -> None:
    if not 0 <= site < state.length:
        raise MpsError(f"site {site} out of range for length {state.length}")


def apply_gate(state: MpsState, op: LocalOperator, site: int) -> MpsState:
    """Apply a one- or two-site operator at ``site`` (and ``site + 1``).

    Two-site application is followed by an SVD truncated to the state's
    ``chi_max``/``sv_cutoff``; the discarded weight is added to
    ``truncation_error``. The orthogonality center ends at ``site`` for one-site
    operators and at ``site + 1`` for two-site operators.
    """
    _check_site(state, site)
    d = state.local_dim
    if op.local_dim != d:
        raise MpsError(f"operator local dimension {op.local_dim} != {d}")
    if op.span == 2 and site == state.length - 1:
        raise MpsError("two-site gate at the last site; use apply_gate_longrange")
    state = canonicalize(state, site)
    tensors = list(state.tensors)
    if op.span == 1:
        tensors[site] = np.einsum("ts,asb->atb", op.matrix, tensors[site])
        return replace(state, tensors=tuple(tensors))

    a, b = tensors[site], tensors[site + 1]
    l, r = a.shape[0], b.shape[2]
    theta = np.tensordot(a, b, axes=(2, 0))  # (l, d, d, r)
    gate = op.matrix.reshape(d, d, d, d)
    theta = np.tensordot(gate, theta, axes=([2, 3], [1, 2]))  # (d, d, l, r)
    theta = theta.transpose(2, 0, 1, 3).reshape(l * d, d * r)
    u, s, vh = svd(theta)
    keep, discarded = truncation_rank(s, state.chi_max, state.sv_cutoff)
    tensors[site] = u[:, :keep].reshape(l, d, keep)
    tensors[site + 1] = (s[:keep, None] * vh[:keep]).reshape(keep, d, r)
    return replace(
        state,
        tensors=tuple(tensors),
        center=site + 1,
        truncation_error=state.truncation_error + discarded,
    )


def swap_operator(local_dim: int) -> LocalOperator:
    d = local_dim
    m = np.zeros((d * d, d * d))
    for x in range(d):
        for y in range(d):
            m[y * d + x, x * d + y] = 1.0
    return LocalOperator(m, span=2)


def apply_gate_longrange(state: MpsState, op: LocalOperator, site_i: int, site_j: int) -> MpsState:
    """Apply a two-site operator on arbitrary sites ``site_i < site_j``.

    Site ``site_j`` is swapped down next to ``site_i``, the operator is applied with
    its first factor on ``site_i``, and the swaps are undone. Every swap truncates
    like :func:`apply_gate`.
    """
    if op.span != 2:
        raise MpsError("long-range application needs a two-site operator")
    if site_i == site_j:
        raise MpsError("site_i and site_j must differ")
    _check_site(state, site_i)
    _check_site(state, site_j)
    if site_i > site_j:
        raise MpsError("site_i must be smaller than site_j")
    swap = swap_operator(state.local_dim)
    for k in range(site_j - 1, site_i, -1):
        state = apply_gate(state, swap, k)
    state = apply_gate(state, op, site_i)
    for k in range(site_i + 1, site_j):
        state = apply_gate(state, swap, k)
    return state


# --------------------------------------------------------------------------- contractions


def transfer_left(env: np.ndarray, bra: np.ndarray, ket: np.ndarray, op: np.ndarray | None = None) -> np.ndarray:
    """Grow a left environment ``env[a, a']`` by one site: ``<bra| op |ket>``."""
    if op is not None:
        ket = np.einsum("ts,asb->atb", op, ket)
    t = np.tensordot(env, ket, axes=(1, 0))  # (a, s, b')
    return np.tensordot(bra.conj(), t, axes=([0, 1], [0, 1]))


def transfer_right(env: np.ndarray, bra: np.ndarray, ket: np.ndarray, op: np.ndarray | None = None) -> np.ndarray:
    """Grow a right environment ``env[b, b']`` by one site."""
    if op is not None:
        ket = np.einsum("ts,asb->atb", op, ket)
    t = np.tensordot(ket, env, axes=(2, 1))  # (a', s, b)
    return np.tensordot(bra.conj(), t, axes=([1, 2], [1, 2]))


def _check_pair(a: MpsState, b: MpsState) -> None:
    if a.length != b.length or a.local_dim != b.local_dim:
        raise MpsError(
            f"shape mismatch: ({a.length}, d={a.local_dim}) vs ({b.length}, d={b.local_dim})"
        )


def overlap(a: MpsState, b: MpsState) -> complex:
    """Exact inner product ``<a|b>``."""
    return expect_string(a, [], b)


def expect_string(a: MpsState, ops: Iterable[tuple[int, np.ndarray]], b: MpsState) -> complex:
    """``<a| prod_k O_k |b>`` for single-site operators on distinct sorted sites."""
    _check_pair(a, b)
    ops = list(ops)
    sites = [s for s, _ in ops]
    if len(set(sites)) != len(sites):
        raise MpsError("duplicate sites in operator string")
    if sites != sorted(sites):
        raise MpsError("operator string sites must be sorted")
    for s in sites:
        _check_site(a, s)
    lookup = dict(ops)
    env = np.ones((1, 1))
    for k in range(a.length):
        env = transfer_left(env, a.tensors[k], b.tensors[k], lookup.get(k))
    return complex(env[0, 0])


def to_dense(state: MpsState) -> np.ndarray:
    """Full state vector, first site most significant. Only for small systems."""
    psi = state.tensors[0]
    for t in state.tensors[1:]:
        psi = np.tensordot(psi, t, axes=(psi.ndim - 1, 0))
    return psi.reshape(-1)


def from_dense(
    vector: np.ndarray,
    local_dim: int,
    chi_max: int = DEFAULT_CHI_MAX,
    sv_cutoff: float = DEFAULT_SV_CUTOFF,
) -> MpsState:
    """Exact MPS of a dense vector by successive SVDs (no truncation)."""
    vector = np.asarray(vector)
    L = round(np.log(vector.size) / np.log(local_dim))
    if local_dim**L != vector.size:
        raise MpsError("vector size is not a power of the local dimension")
    tensors = []
    rest = vector.reshape(1, -1)
    for _ in range(L - 1):
        l = rest.shape[0]
        m = rest.reshape(l * local_dim, -1)
        u, s, vh = svd(m)
        k = max(1, int(np.count_nonzero(s > 1e-14 * max(s[0], 1e-300))))
        tensors.append(u[:, :k].reshape(l, local_dim, k))
        rest = s[:k, None] * vh[:k]
    tensors.append(rest.reshape(rest.shape[0], local_dim, 1))
    return MpsState(tuple(tensors), local_dim, L - 1, chi_max, sv_cutoff)
