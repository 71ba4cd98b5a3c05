"""Pauli matrices and the rung (doubled-site) operators built from them.

Rung basis order is ``2 * u + l`` with 0 = spin up (Z = +1): |uu>, |ud>, |du>, |dd>
for (upper, lower) legs.
"""

import numpy as np

ID2 = np.eye(2)
X = np.array([[0.0, 1.0], [1.0, 0.0]])
Y = np.array([[0.0, -1j], [1j, 0.0]])
Z = np.array([[1.0, 0.0], [0.0, -1.0]])

ID4 = np.eye(4)
X_UP = np.kron(X, ID2)
Z_UP = np.kron(Z, ID2)
XX_RUNG = np.kron(X, X)
ZZ_RUNG = np.kron(Z, Z)
