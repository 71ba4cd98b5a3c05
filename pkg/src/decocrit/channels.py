"""X + ZZ decoherence as filtering operators on Choi states."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .choi import ChoiState
from .mps import LocalOperator, apply_gate, apply_gate_longrange
from .pauli import ID2, ID4, X, XX_RUNG, Z, ZZ_RUNG

logger = logging.getLogger(__name__)

MAXIMAL = math.inf
TRUNCATION_ALARM = 1e-6


def _check_p(p: float, name: str = "p") -> None:
    if not 0.0 <= p <= 0.5:
        raise ValueError(f"{name}={p} outside [0, 1/2]")


def tau_from_p(p: float) -> float:
    """Filter strength ``arctanh(p / (1 - p))``; ``inf`` marks maximal decoherence."""
    _check_p(p)
    if p == 0.5:
        return MAXIMAL
    return math.atanh(p / (1.0 - p))


def px_from_pzz(p_zz: float, J: float) -> float:
    """X-decoherence strength that keeps the state on the critical line."""
    _check_p(p_zz, "p_zz")
    if J <= 0:
        raise ValueError("J must be positive")
    px = 0.5 - 0.5 * (1.0 - 2.0 * p_zz) ** (1.0 / J)
    return min(max(px, 0.0), 0.5)


@dataclass(frozen=True)
class ChannelParams:
    p_zz: float
    p_x: float
    J: float = 1.0
    h: float = 1.0

    def __post_init__(self) -> None:
        _check_p(self.p_zz, "p_zz")
        _check_p(self.p_x, "p_x")
        if self.J <= 0 or self.h <= 0:
            raise ValueError("J and h must be positive")

    @classmethod
    def critical_line(cls, p_zz: float, J: float = 1.0, h: float = 1.0) -> ChannelParams:
        """Parameters with ``p_x`` tied to ``p_zz`` by the critical-line constraint (in ``J/h``)."""
        return cls(p_zz, px_from_pzz(p_zz, J / h), J, h)

    @property
    def tau_zz(self) -> float:
        return tau_from_p(self.p_zz)

    @property
    def tau_x(self) -> float:
        return tau_from_p(self.p_x)

    @property
    def maximal(self) -> bool:
        return self.p_zz == 0.5 or self.p_x == 0.5


def kraus_set(p_D: float) -> list[np.ndarray]:
    """Kraus operators of the combined X + ZZ channel on a two-spin cell.

    The X factor acts on the first spin; matrices use the ``kron`` ordering.
    """
    _check_p(p_D, "p_D")
    xi = np.kron(X, ID2)
    zz = np.kron(Z, Z)
    c = math.sqrt(p_D * (1.0 - p_D))
    return [(1.0 - p_D) * np.eye(4), c * xi, c * zz, p_D * xi @ zz]


def x_filter(p: float) -> np.ndarray:
    """One-rung filter ``(1-p) Id + p X_u X_l``."""
    return (1.0 - p) * ID4 + p * XX_RUNG


def zz_filter(p: float) -> np.ndarray:
    """Two-rung filter ``(1-p) Id + p (Z_u Z_u') (Z_l Z_l')``."""
    return (1.0 - p) * np.eye(16) + p * np.kron(ZZ_RUNG, ZZ_RUNG)


def apply_decoherence(state: ChoiState, params: ChannelParams, periodic: bool = True) -> ChoiState:
    """Apply all X filters, then the ZZ filters on even bonds, odd bonds and the wrap bond.

    Truncation follows the state's own ``chi_max``/``sv_cutoff``. The result is left
    unnormalized. A discarded weight above ``TRUNCATION_ALARM`` is logged, not raised.
    """
    L = state.L
    mps = state.mps
    start_error = mps.truncation_error
    if params.p_x > 0:
        fx = LocalOperator(x_filter(params.p_x), span=1)
        for j in range(L):
            mps = apply_gate(mps, fx, j)
    if params.p_zz > 0 and L > 1:
        fzz = LocalOperator(zz_filter(params.p_zz), span=2)
        for j in range(0, L - 1, 2):
            mps = apply_gate(mps, fzz, j)
        for j in range(1, L - 1, 2):
            mps = apply_gate(mps, fzz, j)
        if periodic:
            mps = apply_gate_longrange(mps, fzz, 0, L - 1)
    added = mps.truncation_error - start_error
    if added > TRUNCATION_ALARM:
        logger.warning("decoherence truncation discarded weight %.3e (L=%d, %s)", added, L, params)
    return ChoiState(mps, L)
