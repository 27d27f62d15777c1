"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array


def check_llr_matrix(X, n_features=None):
    """Return ``X`` as a finite float64 array of shape (n_frames, n_vars).

    A 1-D input is treated as a single frame.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} LLRs per frame, got {X.shape[1]}")
    return X


def check_bits(bits, n):
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.shape[0] != n:
        raise ValueError(f"expected a bit vector of length {n}, got shape {bits.shape}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bit vector must be binary")
    return bits.astype(np.uint8)
