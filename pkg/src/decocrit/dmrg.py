"""Two-site DMRG for the transverse-field Ising chain."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .mps import (
    DEFAULT_CHI_MAX,
    DEFAULT_SV_CUTOFF,
    MpsState,
    canonicalize,
    normalize,
    random_mps,
    svd,
    truncation_rank,
)
from .pauli import ID2, X, Z

logger = logging.getLogger(__name__)

MIN_SWEEPS = 6
# local problems at or below this size are solved densely
DENSE_LIMIT = 256


@dataclass(frozen=True)
class MpoOperator:
    """MPO with tensors ``(w_left, d_out, d_in, w_right)``."""

    tensors: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tensors", tuple(self.tensors))
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[3] != 1:
            raise ValueError("boundary MPO bonds must have dimension 1")

    @property
    def length(self) -> int:
        return len(self.tensors)

    def to_dense(self) -> np.ndarray:
        """Dense matrix (small ``L`` only)."""
        w = self.tensors[0][0]  # (d, d, w)
        for t in self.tensors[1:]:
            w = np.tensordot(w, t, axes=(w.ndim - 1, 0))
        w = w[..., 0]
        L = self.length
        # axes: out0, in0, out1, in1, ...
        perm = list(range(0, 2 * L, 2)) + list(range(1, 2 * L, 2))
        d = self.tensors[0].shape[1]
        return w.transpose(perm).reshape(d**L, d**L)


@dataclass(frozen=True)
class DmrgSettings:
    chi_max: int = DEFAULT_CHI_MAX
    sv_cutoff: float = DEFAULT_SV_CUTOFF
    sweep_tol: float = 1e-5
    max_sweeps: int = 40
    seed: int = 0
    init_chi: int = 8
    eig_tol: float = 1e-10

    def __post_init__(self) -> None:
        if self.chi_max < 2:
            raise ValueError("chi_max must be at least 2")
        if self.sweep_tol <= 0:
            raise ValueError("sweep_tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be positive")


@dataclass
class DmrgResult:
    state: MpsState
    energy: float
    sweep_energies: list[float] = field(default_factory=list)
    converged: bool = True
    last_delta: float = 0.0
    truncation_error: float = 0.0


def build_tfim_mpo(L: int, J: float, h: float, periodic: bool = True) -> MpoOperator:
    """MPO of ``-sum_j [J Z_j Z_{j+1} + h X_j]``.

    With ``periodic`` the wrap bond ``Z_{L-1} Z_0`` is carried by an extra MPO
    channel that is opened on site 0 and closed on site L-1.
    """
    if L < 2:
        raise ValueError("need at least two sites")
    D = 4 if periodic else 3
    # channels: 0 = nothing placed, 1 = Z placed, 2 = done, 3 = wrap Z carried
    bulk = np.zeros((D, 2, 2, D))
    bulk[0, :, :, 0] = ID2
    bulk[0, :, :, 1] = Z
    bulk[0, :, :, 2] = -h * X
    bulk[1, :, :, 2] = -J * Z
    bulk[2, :, :, 2] = ID2
    if periodic:
        bulk[3, :, :, 3] = ID2
    first = bulk[0:1].copy()
    if periodic:
        first[0, :, :, 3] = -J * Z
    last = bulk[:, :, :, 2:3].copy()
    if periodic:
        last[3, :, :, 0] = Z
    tensors = [first] + [bulk] * (L - 2) + [last]
    return MpoOperator(tuple(tensors))


# --------------------------------------------------------------------------- environments


def _grow_left(env: np.ndarray, a: np.ndarray, w: np.ndarray) -> np.ndarray:
    # env (a, w, a'), a (a', s, b'), w (w, t, s, v) -> (b, v, b')
    t = np.tensordot(env, a, axes=(2, 0))  # (a, w, s, b')
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))  # (a, b', t, v)
    return np.tensordot(a.conj(), t, axes=([0, 1], [0, 2])).transpose(0, 2, 1)


def _grow_right(env: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # env (b, v, b'), b (a', s, b'), w (w, t, s, v) -> (a, w, a')
    t = np.tensordot(b, env, axes=(2, 2))  # (a', s, b, v)
    t = np.tensordot(t, w, axes=([1, 3], [2, 3]))  # (a', b, w, t)
    return np.tensordot(b.conj(), t, axes=([1, 2], [3, 1])).transpose(0, 2, 1)


def _apply_heff(lenv, w1, w2, renv, theta):
    # theta (a', s1, s2, b')
    t = np.tensordot(lenv, theta, axes=(2, 0))  # (a, w, s1, s2, b')
    t = np.tensordot(t, w1, axes=([1, 2], [0, 2]))  # (a, s2, b', t1, v)
    t = np.tensordot(t, w2, axes=([4, 1], [0, 2]))  # (a, b', t1, t2, u)
    t = np.tensordot(t, renv, axes=([4, 1], [1, 2]))  # (a, t1, t2, b)
    return t


def _local_ground(lenv, w1, w2, renv, theta0, tol):
    shape = theta0.shape
    n = theta0.size
    dtype = np.result_type(lenv, w1, w2, renv, theta0)

    def matvec(v):
        return _apply_heff(lenv, w1, w2, renv, v.reshape(shape)).reshape(-1)

    if n <= DENSE_LIMIT:
        h = np.empty((n, n), dtype=dtype)
        eye = np.eye(n, dtype=dtype)
        for k in range(n):
            h[:, k] = matvec(eye[k])
        h = 0.5 * (h + h.conj().T)
        vals, vecs = np.linalg.eigh(h)
        return float(vals[0]), vecs[:, 0].reshape(shape)
    op = spla.LinearOperator((n, n), matvec=matvec, dtype=dtype)
    v0 = theta0.reshape(-1).astype(dtype)
    vals, vecs = spla.eigsh(op, k=1, which="SA", v0=v0, tol=tol, ncv=min(n, 20))
    return float(vals[0]), vecs[:, 0].reshape(shape)


def _mpo_expectation(state: MpsState, mpo: MpoOperator) -> float:
    env = np.ones((1, 1, 1))
    for a, w in zip(state.tensors, mpo.tensors):
        env = _grow_left(env, a, w)
    return float(env[0, 0, 0].real)


def ground_state(mpo: MpoOperator, settings: DmrgSettings = DmrgSettings()) -> DmrgResult:
    """Variational ground state by two-site DMRG sweeps.

    Sweeping stops once two consecutive full sweeps differ by less than
    ``sweep_tol`` in energy (after at least ``MIN_SWEEPS`` sweeps) or after
    ``max_sweeps``. Non-convergence is logged and flagged on the result; the last
    state is still returned.
    """
    L = mpo.length
    d = mpo.tensors[0].shape[1]
    dtype = np.result_type(*mpo.tensors)
    state = random_mps(L, d, settings.init_chi, seed=settings.seed, dtype=dtype,
                       chi_max=settings.chi_max, sv_cutoff=settings.sv_cutoff)
    state = normalize(canonicalize(state, 0))
    tensors = list(state.tensors)
    W = mpo.tensors

    lenvs: list[np.ndarray | None] = [None] * (L + 1)
    renvs: list[np.ndarray | None] = [None] * (L + 1)
    lenvs[0] = np.ones((1, 1, 1), dtype=dtype)
    renvs[L] = np.ones((1, 1, 1), dtype=dtype)
    for k in range(L - 1, 0, -1):
        renvs[k] = _grow_right(renvs[k + 1], tensors[k], W[k])

    energies: list[float] = []
    truncation = 0.0
    converged = False
    delta = float("inf")
    energy = 0.0
    for sweep in range(settings.max_sweeps):
        for k in range(L - 1):  # left to right
            theta = np.tensordot(tensors[k], tensors[k + 1], axes=(2, 0))
            energy, theta = _local_ground(lenvs[k], W[k], W[k + 1], renvs[k + 2], theta, settings.eig_tol)
            l, r = theta.shape[0], theta.shape[3]
            u, s, vh = svd(theta.reshape(l * d, d * r))
            keep, disc = truncation_rank(s, settings.chi_max, settings.sv_cutoff)
            truncation += disc
            s = s[:keep] / np.linalg.norm(s[:keep])
            tensors[k] = u[:, :keep].reshape(l, d, keep)
            tensors[k + 1] = (s[:, None] * vh[:keep]).reshape(keep, d, r)
            lenvs[k + 1] = _grow_left(lenvs[k], tensors[k], W[k])
        for k in range(L - 2, -1, -1):  # right to left
            theta = np.tensordot(tensors[k], tensors[k + 1], axes=(2, 0))
            energy, theta = _local_ground(lenvs[k], W[k], W[k + 1], renvs[k + 2], theta, settings.eig_tol)
            l, r = theta.shape[0], theta.shape[3]
            u, s, vh = svd(theta.reshape(l * d, d * r))
            keep, disc = truncation_rank(s, settings.chi_max, settings.sv_cutoff)
            truncation += disc
            s = s[:keep] / np.linalg.norm(s[:keep])
            tensors[k] = (u[:, :keep] * s).reshape(l, d, keep)
            tensors[k + 1] = vh[:keep].reshape(keep, d, r)
            renvs[k + 1] = _grow_right(renvs[k + 2], tensors[k + 1], W[k + 1])
        if energies:
            delta = abs(energy - energies[-1])
        energies.append(energy)
        logger.debug("sweep %d: E=%.12f dE=%.3e chi=%d", sweep, energy, delta,
                     max(t.shape[2] for t in tensors))
        if sweep + 1 >= MIN_SWEEPS and delta < settings.sweep_tol:
            converged = True
            break

    state = MpsState(tuple(tensors), d, 0, settings.chi_max, settings.sv_cutoff, truncation)
    final = _mpo_expectation(state, mpo)
    if not converged:
        logger.warning("DMRG not converged after %d sweeps (last dE=%.3e)", settings.max_sweeps, delta)
    return DmrgResult(state, final, energies, converged, delta, truncation)
