"""Renyi-2 entropies, mutual information, correlators and susceptibilities of Choi states.

All quantities are ratios of contractions of the same vector and therefore do not
depend on its normalization. Profiles and curves are computed from cached
transfer-matrix environments, one pass per quantity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .channels import ChannelParams
from .choi import T_RUNG, ChoiState
from .mps import MpsState, expect_string, transfer_left, transfer_right
from .pauli import X_UP, XX_RUNG, Z_UP, ZZ_RUNG

logger = logging.getLogger(__name__)

IMAG_TOL = 1e-9
IMAG_ALARM = 1e-6

# depolarizing rung projector onto (|uu> + |dd>)/sqrt(2)
_T_UNNORM = np.array([1.0, 0.0, 0.0, 1.0])
DEPOLARIZER = 0.5 * np.outer(_T_UNNORM, _T_UNNORM)
_T_TENSOR = T_RUNG.reshape(1, 4, 1)


@dataclass(frozen=True)
class Subsystem:
    """Contiguous block of ``length`` sites starting at ``start``."""

    start: int
    length: int
    wrap: bool = False

    def sites(self, L: int) -> list[int]:
        if self.length < 1 or self.length > L or self.start < 0:
            raise ValueError(f"invalid subsystem {self} for L={L}")
        if not self.wrap and self.start + self.length > L:
            raise ValueError(f"subsystem {self} exceeds the chain; pass wrap=True to wrap around")
        return sorted((self.start + k) % L for k in range(self.length))


@dataclass
class ObservableRecord:
    params: ChannelParams
    L: int
    s2_profile: list[tuple[int, float]] = field(default_factory=list)
    mi_profile: list[tuple[int, float]] = field(default_factory=list)
    czz_curve: list[tuple[int, float]] = field(default_factory=list)
    cxx_curve: list[tuple[int, float]] = field(default_factory=list)
    c2zz_curve: list[tuple[int, float]] = field(default_factory=list)
    cstx_curve: list[tuple[int, float]] = field(default_factory=list)
    chi_I: float = float("nan")
    chi_II: float = float("nan")
    truncation_budget: float = 0.0

    CURVES = ("s2_profile", "mi_profile", "czz_curve", "cxx_curve", "c2zz_curve", "cstx_curve")

    def to_dict(self) -> dict:
        out = asdict(self)
        for name in self.CURVES:
            out[name] = [[int(x), float(y)] for x, y in getattr(self, name)]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ObservableRecord:
        data = dict(data)
        data["params"] = ChannelParams(**data["params"])
        for name in cls.CURVES:
            data[name] = [(int(x), float(y)) for x, y in data[name]]
        return cls(**data)


def _real(value: complex, label: str) -> float:
    value = complex(value)
    scale = max(1.0, abs(value.real))
    if abs(value.imag) > IMAG_ALARM * scale:
        logger.warning("%s has imaginary part %.3e", label, value.imag)
    elif abs(value.imag) > IMAG_TOL * scale:
        logger.debug("%s has imaginary part %.3e", label, value.imag)
    return value.real


def _check_pair(L: int, i: int, j: int) -> None:
    if i == j:
        raise ValueError("correlator sites must differ")
    if not (0 <= i < L and 0 <= j < L):
        raise ValueError(f"sites ({i}, {j}) out of range for L={L}")


# --------------------------------------------------------------------------- point functions


def renyi2_entropy(state: ChoiState, sub: Subsystem) -> float:
    """Renyi-2 entropy of the trace-normalized reduced state on ``sub``.

    The complement is traced out by projecting each of its rungs on the
    depolarizing projector; then ``S = -log(d_comp * <<v|v>> / |Tr rho|^2)``.
    """
    L = state.L
    inside = set(sub.sites(L))
    outside = [j for j in range(L) if j not in inside]
    val = _real(expect_string(state.mps, [(j, DEPOLARIZER) for j in outside], state.mps), "<<v|v>>")
    tr = abs(state.trace()) ** 2
    return -math.log(2.0 ** len(outside) * val / tr)


def mutual_information(state: ChoiState, L_A: int) -> float:
    """``S_A + S_B - S_AB`` for ``A = [0, L_A)`` and ``B`` its complement."""
    L = state.L
    if not 1 <= L_A <= L - 1:
        raise ValueError(f"L_A={L_A} outside [1, {L - 1}]")
    s_a = renyi2_entropy(state, Subsystem(0, L_A))
    s_b = renyi2_entropy(state, Subsystem(L_A, L - L_A))
    s_ab = renyi2_entropy(state, Subsystem(0, L))
    return s_a + s_b - s_ab


def corr_renyi2_zz(state: ChoiState, i: int, j: int) -> float:
    _check_pair(state.L, i, j)
    i, j = sorted((i, j))
    num = expect_string(state.mps, [(i, ZZ_RUNG), (j, ZZ_RUNG)], state.mps)
    return _real(num / state.self_overlap(), "C2_ZZ")


def _canonical(state: ChoiState, ops: list[tuple[int, np.ndarray]]) -> complex:
    ident = _identity_mps(state.L)
    return expect_string(ident, ops, state.mps) / state.identity_overlap()


def corr_canonical_z(state: ChoiState, i: int, j: int) -> float:
    """``Tr[rho Z_i Z_j] / Tr[rho]``."""
    _check_pair(state.L, i, j)
    i, j = sorted((i, j))
    return _real(_canonical(state, [(i, Z_UP), (j, Z_UP)]), "C_Z")


def corr_canonical_x_connected(state: ChoiState, i: int, j: int) -> float:
    """``<X_i X_j> - <X_i><X_j>`` in the trace-normalized state."""
    _check_pair(state.L, i, j)
    i, j = sorted((i, j))
    xx = _canonical(state, [(i, X_UP), (j, X_UP)])
    xi = _canonical(state, [(i, X_UP)])
    xj = _canonical(state, [(j, X_UP)])
    return _real(xx - xi * xj, "C_X")


def corr_renyi2_string_x(state: ChoiState, i: int, j: int) -> float:
    """Renyi-2 disorder correlator of the string ``prod_{i <= l < j} X_l``."""
    if i >= j:
        raise ValueError("string correlator needs i < j")
    _check_pair(state.L, i, j)
    ops = [(k, XX_RUNG) for k in range(i, j)]
    num = expect_string(state.mps, ops, state.mps)
    return _real(num / state.self_overlap(), "C2_stX")


def susceptibilities(state: ChoiState) -> tuple[float, float]:
    """``(chi_I, chi_II)``: ``(2/L) * sum_{r=1}^{L/2}`` of the canonical and Renyi-2 ZZ correlators."""
    L = state.L
    if L % 2:
        raise ValueError("susceptibilities need even L")
    czz = canonical_z_curve(state)
    c2 = renyi2_zz_curve(state)
    return _chi(czz, L), _chi(c2, L)


def _chi(curve: list[tuple[int, float]], L: int) -> float:
    return 2.0 / L * sum(v for r, v in curve if 1 <= r <= L // 2)


# --------------------------------------------------------------------------- environment caches


def _identity_mps(L: int) -> MpsState:
    from .choi import identity_choi

    return identity_choi(L).mps


def _left_envs(bra: MpsState, ket: MpsState, op: np.ndarray | None = None) -> list[np.ndarray]:
    """``envs[k]`` covers sites ``0..k-1``, each with ``op`` (or identity) inserted."""
    envs = [np.ones((1, 1))]
    for a, b in zip(bra.tensors, ket.tensors):
        envs.append(transfer_left(envs[-1], a, b, op))
    return envs


def _right_envs(bra: MpsState, ket: MpsState, op: np.ndarray | None = None) -> list[np.ndarray]:
    """``envs[k]`` covers sites ``k..L-1``."""
    L = ket.length
    envs: list[np.ndarray] = [None] * (L + 1)  # type: ignore[list-item]
    envs[L] = np.ones((1, 1))
    for k in range(L - 1, -1, -1):
        envs[k] = transfer_right(envs[k + 1], bra.tensors[k], ket.tensors[k], op)
    return envs


def _close(left: np.ndarray, right: np.ndarray) -> complex:
    return complex(np.sum(left * right))


def _origin_curve(bra: MpsState, ket: MpsState, op: np.ndarray, right: list[np.ndarray], string: bool) -> list[complex]:
    """``<bra| O_0 O_r |ket>`` (or the string ``O_0..O_{r-1}``) for ``r = 1..L-1``."""
    L = ket.length
    env = transfer_left(np.ones((1, 1)), bra.tensors[0], ket.tensors[0], op)
    out = []
    for r in range(1, L):
        if string:
            out.append(_close(env, right[r]))
        else:
            closed = transfer_left(env, bra.tensors[r], ket.tensors[r], op)
            out.append(_close(closed, right[r + 1]))
        env = transfer_left(env, bra.tensors[r], ket.tensors[r], op if string else None)
    return out


def renyi2_zz_curve(state: ChoiState, right: list[np.ndarray] | None = None) -> list[tuple[int, float]]:
    mps = state.mps
    right = right or _right_envs(mps, mps)
    norm = right[0][0, 0]
    vals = _origin_curve(mps, mps, ZZ_RUNG, right, string=False)
    return [(r, _real(v / norm, "C2_ZZ")) for r, v in enumerate(vals, start=1)]


def renyi2_string_x_curve(state: ChoiState, right: list[np.ndarray] | None = None) -> list[tuple[int, float]]:
    mps = state.mps
    right = right or _right_envs(mps, mps)
    norm = right[0][0, 0]
    vals = _origin_curve(mps, mps, XX_RUNG, right, string=True)
    return [(r, _real(v / norm, "C2_stX")) for r, v in enumerate(vals, start=1)]


def canonical_z_curve(state: ChoiState) -> list[tuple[int, float]]:
    ident = _identity_mps(state.L)
    right = _right_envs(ident, state.mps)
    tr = right[0][0, 0]
    vals = _origin_curve(ident, state.mps, Z_UP, right, string=False)
    return [(r, _real(v / tr, "C_Z")) for r, v in enumerate(vals, start=1)]


def canonical_x_connected_curve(state: ChoiState) -> list[tuple[int, float]]:
    ident = _identity_mps(state.L)
    mps = state.mps
    left = _left_envs(ident, mps)
    right = _right_envs(ident, mps)
    tr = right[0][0, 0]
    x1 = [_close(transfer_left(left[j], ident.tensors[j], mps.tensors[j], X_UP), right[j + 1]) / tr
          for j in range(state.L)]
    xx = _origin_curve(ident, mps, X_UP, right, string=False)
    return [(r, _real(v / tr - x1[0] * x1[r], "C_X")) for r, v in enumerate(xx, start=1)]


def renyi2_profiles(state: ChoiState) -> tuple[list[tuple[int, float]], list[tuple[int, float]]]:
    """``S_A`` for ``A = [0, L_A)``, ``L_A = 1..L``, and ``MI(L_A)`` for ``L_A = 1..L-1``."""
    L = state.L
    mps = state.mps
    log_tr2 = math.log(abs(state.trace()) ** 2)
    left_id = _left_envs(mps, mps)
    right_id = _right_envs(mps, mps)
    left_p = _left_envs(mps, mps, DEPOLARIZER)
    right_p = _right_envs(mps, mps, DEPOLARIZER)

    def entropy(val: complex, n_out: int) -> float:
        v = _real(val, "<<v|v>>")
        return -(n_out * math.log(2.0) + math.log(v) - log_tr2)

    s_a = [entropy(_close(left_id[k], right_p[k]), L - k) for k in range(1, L + 1)]
    s_b = [entropy(_close(left_p[k], right_id[k]), k) for k in range(1, L)]
    s_full = s_a[-1]
    s2 = list(zip(range(1, L + 1), s_a))
    mi = [(k, s_a[k - 1] + s_b[k - 1] - s_full) for k in range(1, L)]
    return s2, mi


def measure_all(state: ChoiState, params: ChannelParams, what: set[str] | None = None) -> ObservableRecord:
    """Fill an :class:`ObservableRecord`; ``what`` selects among
    ``{"entropy", "correlators", "susceptibilities"}`` (default: all)."""
    what = {"entropy", "correlators", "susceptibilities"} if what is None else set(what)
    rec = ObservableRecord(params=params, L=state.L, truncation_budget=state.mps.truncation_error)
    if "entropy" in what:
        rec.s2_profile, rec.mi_profile = renyi2_profiles(state)
    if what & {"correlators", "susceptibilities"}:
        right = _right_envs(state.mps, state.mps)
        rec.czz_curve = canonical_z_curve(state)
        rec.c2zz_curve = renyi2_zz_curve(state, right)
        if "correlators" in what:
            rec.cxx_curve = canonical_x_connected_curve(state)
            rec.cstx_curve = renyi2_string_x_curve(state, right)
        if state.L % 2 == 0:
            rec.chi_I = _chi(rec.czz_curve, state.L)
            rec.chi_II = _chi(rec.c2zz_curve, state.L)
    return rec
