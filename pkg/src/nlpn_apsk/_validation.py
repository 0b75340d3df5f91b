"""Input checks shared by the estimators."""
import numpy as np
from sklearn.utils.validation import check_array


def check_observations(X) -> np.ndarray:
    """Return observations as a 1-D complex array.

    Accepts complex arrays of any shape (flattened) or real arrays of
    shape ``(n, 2)`` holding in-phase and quadrature components.
    """
    X = np.asarray(X)
    if np.iscomplexobj(X):
        X = X.reshape(-1)
        if not np.all(np.isfinite(X)):
            raise ValueError("observations contain NaN or infinity")
        return X.astype(complex, copy=False)
    X = check_array(X, ensure_2d=True, dtype=float)
    if X.shape[1] != 2:
        raise ValueError(f"real observations must have shape (n, 2), got {X.shape}")
    return X[:, 0] + 1j * X[:, 1]


def as_iq(y) -> np.ndarray:
    """Complex samples to an ``(n, 2)`` real array."""
    y = np.asarray(y, dtype=complex).reshape(-1)
    return np.column_stack([y.real, y.imag])
