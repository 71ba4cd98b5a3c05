"""Dense exact reference for small chains (L <= 12).

Nothing here touches the MPS code path; density matrices are plain arrays and
channels are applied by direct index manipulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .channels import ChannelParams
from .observables import ObservableRecord, Subsystem

MAX_L = 12


class OracleSizeError(ValueError):
    pass


def _check_L(L: int) -> None:
    if L > MAX_L:
        raise OracleSizeError(f"dense oracle limited to L <= {MAX_L}, got {L}")


@dataclass(frozen=True)
class DenseState:
    amplitudes: np.ndarray
    L: int

    def density_matrix(self) -> DenseDensityMatrix:
        v = self.amplitudes
        return DenseDensityMatrix(np.outer(v, v.conj()), self.L)


@dataclass(frozen=True)
class DenseDensityMatrix:
    matrix: np.ndarray
    L: int

    def normalized(self) -> np.ndarray:
        return self.matrix / np.trace(self.matrix)


def _z_diag(L: int, site: int) -> np.ndarray:
    """Diagonal of Z on ``site`` (site 0 most significant)."""
    idx = np.arange(2**L)
    return 1.0 - 2.0 * ((idx >> (L - 1 - site)) & 1)


def tfim_hamiltonian(L: int, J: float, h: float, periodic: bool = True) -> sp.csr_matrix:
    """``-sum_j [J Z_j Z_{j+1} + h X_j]`` as a sparse matrix."""
    n = 2**L
    idx = np.arange(n)
    diag = np.zeros(n)
    bonds = range(L) if periodic else range(L - 1)
    for j in bonds:
        diag -= J * _z_diag(L, j) * _z_diag(L, (j + 1) % L)
    rows, cols = [idx], [idx]
    vals = [diag]
    for j in range(L):
        rows.append(idx ^ (1 << (L - 1 - j)))
        cols.append(idx)
        vals.append(np.full(n, -h))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def exact_ground_state(L: int, J: float, h: float, periodic: bool = True) -> tuple[DenseState, float]:
    """Lowest eigenpair, phase fixed so the first nonzero amplitude is positive real."""
    _check_L(L)
    H = tfim_hamiltonian(L, J, h, periodic)
    if L <= 8:
        vals, vecs = np.linalg.eigh(H.toarray())
        e, v = vals[0], vecs[:, 0]
    else:
        vals, vecs = spla.eigsh(H, k=1, which="SA", tol=1e-14, v0=np.ones(2**L))
        e, v = vals[0], vecs[:, 0]
    v = v.astype(complex)
    first = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
    v = v * (abs(first) / first)
    return DenseState(v / np.linalg.norm(v), L), float(e)


def _flip(rho: np.ndarray, L: int, sites: list[int]) -> np.ndarray:
    """``P rho P`` with ``P = prod_{j in sites} X_j``."""
    t = rho.reshape((2,) * (2 * L))
    return np.flip(t, axis=tuple(sites) + tuple(L + s for s in sites)).reshape(rho.shape)


def exact_apply_channel(rho: DenseDensityMatrix, p_zz: float, p_x: float, periodic: bool = True) -> DenseDensityMatrix:
    """All X dephasings, then all ZZ dephasings (wrap bond included when periodic)."""
    L = rho.L
    _check_L(L)
    m = np.array(rho.matrix, dtype=complex)
    for j in range(L):
        m = (1.0 - p_x) * m + p_x * _flip(m, L, [j])
    bonds = range(L) if periodic else range(L - 1)
    for j in bonds:
        s = _z_diag(L, j) * _z_diag(L, (j + 1) % L)
        m = (1.0 - p_zz) * m + p_zz * (s[:, None] * m * s[None, :])
    return DenseDensityMatrix(m, L)


def reduced_density_matrix(rho: np.ndarray, L: int, keep: list[int]) -> np.ndarray:
    keep = sorted(keep)
    trace_out = [j for j in range(L) if j not in keep]
    t = rho.reshape((2,) * (2 * L))
    # pair each traced ket axis with its bra axis, then contract
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    ket = list(letters[:L])
    bra = list(letters[L:2 * L])
    for j in trace_out:
        bra[j] = ket[j]
    out = "".join(ket[j] for j in keep) + "".join(bra[j] for j in keep)
    r = np.einsum("".join(ket) + "".join(bra) + "->" + out, t)
    n = 2 ** len(keep)
    return r.reshape(n, n)


def exact_renyi2(rho: DenseDensityMatrix, sub: Subsystem) -> float:
    """``-log Tr[rho_X^2]`` of the trace-normalized state."""
    m = rho.normalized()
    r = reduced_density_matrix(m, rho.L, sub.sites(rho.L))
    return -math.log(np.real(np.trace(r @ r)))


def _tr(a: np.ndarray, b: np.ndarray) -> complex:
    """``Tr[a b]`` without forming the product."""
    return complex(np.sum(a * b.T))


def exact_correlators(rho: DenseDensityMatrix, params: ChannelParams | None = None) -> ObservableRecord:
    """Every curve and susceptibility by direct traces."""
    L = rho.L
    _check_L(L)
    m = rho.normalized()
    purity = _tr(m, m).real
    s2 = [(k, exact_renyi2(rho, Subsystem(0, k))) for k in range(1, L + 1)]
    full = s2[-1][1]
    mi = [(k, s2[k - 1][1] + exact_renyi2(rho, Subsystem(k, L - k)) - full) for k in range(1, L)]

    diag = np.real(np.diag(m))
    z0 = _z_diag(L, 0)
    x_one = [np.real(_x_expect(m, L, [j])) for j in range(L)]
    czz, cxx, c2zz, cstx = [], [], [], []
    for r in range(1, L):
        zr = _z_diag(L, r)
        s = z0 * zr
        czz.append((r, float(np.sum(diag * s))))
        cxx.append((r, float(np.real(_x_expect(m, L, [0, r])) - x_one[0] * x_one[r])))
        c2zz.append((r, float(np.real(_tr(s[:, None] * m * s[None, :], m)) / purity)))
        cstx.append((r, float(np.real(_tr(_flip(m, L, list(range(r))), m)) / purity)))
    chi_I = 2.0 / L * sum(v for r, v in czz if r <= L // 2) if L % 2 == 0 else float("nan")
    chi_II = 2.0 / L * sum(v for r, v in c2zz if r <= L // 2) if L % 2 == 0 else float("nan")
    params = params if params is not None else ChannelParams(0.0, 0.0)
    return ObservableRecord(params, L, s2, mi, czz, cxx, c2zz, cstx, chi_I, chi_II, 0.0)


def _x_expect(m: np.ndarray, L: int, sites: list[int]) -> complex:
    """``Tr[m prod X_j]``: sum of the entries ``m[a, a ^ mask]``."""
    mask = 0
    for j in sites:
        mask |= 1 << (L - 1 - j)
    idx = np.arange(2**L)
    return complex(np.sum(m[idx, idx ^ mask]))


def exact_pipeline(L: int, params: ChannelParams, periodic: bool = True) -> DenseDensityMatrix:
    """Ground state of the chain at ``(J, h)`` followed by the channel."""
    psi, _ = exact_ground_state(L, params.J, params.h, periodic)
    return exact_apply_channel(psi.density_matrix(), params.p_zz, params.p_x, periodic)


def kraus_apply(rho: np.ndarray, kraus: list[np.ndarray]) -> np.ndarray:
    return sum(k @ rho @ k.conj().T for k in kraus)


def local_paulis(L: int, site: int, op: np.ndarray) -> np.ndarray:
    """Dense ``op`` on ``site`` of an ``L``-site chain."""
    out = np.ones((1, 1))
    for j in range(L):
        out = np.kron(out, op if j == site else np.eye(2))
    return out

