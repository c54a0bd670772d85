"""Dense matrix kernels shared by the losses, verifiers and trainer.

Everything here works on float64 numpy arrays with row-major semantics:
an ``(n, d)`` matrix holds ``n`` embeddings of dimension ``d``.
"""

import numpy as np

__all__ = [
    "as_matrix",
    "as_labels",
    "pairwise_sq_euclidean",
    "cosine_similarity",
    "row_normalize",
    "class_means",
    "class_sums",
    "soft_means",
    "one_hot",
    "log_sum_exp",
    "log_sum_exp_rows",
    "softmax_rows",
    "symmetric_eigenvalues",
    "EigenConvergenceError",
]


class EigenConvergenceError(RuntimeError):
    """Raised when the Jacobi sweeps fail to annihilate the off-diagonal."""


def as_matrix(Z, name="Z"):
    """Return ``Z`` as a finite 2-D float64 array (no copy if already one)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise ValueError(f"{name} contains non-finite entries")
    return Z


def as_labels(y, K=None):
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("labels must be a non-empty 1-D array")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if K is None:
        K = int(y.max()) + 1
    if y.min() < 0 or y.max() >= K:
        raise ValueError(f"labels must lie in [0, {K})")
    return y, int(K)


def pairwise_sq_euclidean(Z):
    """Squared Euclidean distances ``||z_i - z_j||^2`` for every pair of rows.

    Differences are formed explicitly rather than through the
    ``|a|^2 + |b|^2 - 2ab`` expansion so the result is never negative.
    """
    Z = as_matrix(Z)
    diff = Z[:, None, :] - Z[None, :, :]
    D2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(D2, 0.0)
    return D2


def row_normalize(Z):
    """Scale every row to unit Euclidean norm."""
    Z = as_matrix(Z)
    norms = np.linalg.norm(Z, axis=1)
    bad = np.flatnonzero(norms <= 1e-12)
    if bad.size:
        raise ValueError(f"row {bad[0]} has zero norm")
    return Z / norms[:, None]


def cosine_similarity(Z):
    """Matrix of ``z_i . z_j / (|z_i| |z_j|)``.

    This is a similarity (1 on the diagonal, larger means closer), even
    though it is commonly called a cosine *distance*.
    """
    N = row_normalize(Z)
    S = N @ N.T
    np.clip(S, -1.0, 1.0, out=S)
    np.fill_diagonal(S, 1.0)
    return S


def one_hot(y, K):
    Y = np.zeros((len(y), K))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def class_sums(Z, y, K):
    """Row ``k`` is the sum of embeddings labelled ``k`` (zero if none)."""
    S = np.zeros((K, Z.shape[1]))
    np.add.at(S, y, Z)
    return S


def class_means(Z, y, K=None):
    """Hard class centroids, one row per class."""
    Z = as_matrix(Z)
    y, K = as_labels(y, K)
    if len(y) != Z.shape[0]:
        raise ValueError("labels and embeddings disagree on n")
    counts = np.bincount(y, minlength=K)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"class {empty[0]} has no members")
    return class_sums(Z, y, K) / counts[:, None]


def soft_means(Z, P):
    """Probability-weighted centroids ``c_k = (1/n) sum_i P[i, k] z_i``.

    Note the ``1/n`` normalisation: with one-hot ``P`` the result is the
    hard mean scaled by the class frequency.
    """
    Z = as_matrix(Z)
    P = as_matrix(P, "P")
    if P.shape[0] != Z.shape[0]:
        raise ValueError("P and Z disagree on n")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("rows of P must be probability vectors")
    return P.T @ Z / Z.shape[0]


def log_sum_exp(v):
    """Stable ``log(sum(exp(v)))`` for a non-empty finite vector."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("log_sum_exp input must be finite")
    m = v.max()
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_sum_exp_rows(A, mask=None):
    """Row-wise log-sum-exp, optionally restricted to ``mask``.

    Rows with an empty mask return ``-inf``.
    """
    A = np.asarray(A, dtype=np.float64)
    if mask is None:
        m = A.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(A - m).sum(axis=1, keepdims=True)))[:, 0]
    masked = np.where(mask, A, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return (m + np.log(np.exp(masked - m).sum(axis=1, keepdims=True)))[:, 0]


def softmax_rows(A, mask=None):
    """Row-wise softmax; masked-out entries get probability 0."""
    A = np.asarray(A, dtype=np.float64)
    if mask is not None:
        A = np.where(mask, A, -np.inf)
    m = A.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    E = np.exp(A - m)
    s = E.sum(axis=1, keepdims=True)
    return np.divide(E, s, out=np.zeros_like(E), where=s > 0)


def symmetric_eigenvalues(A, tol=1e-10, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    A : array_like, shape (d, d)
        Symmetric matrix (asymmetry above 1e-9 is rejected), ``d <= 256``.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm drops below
        ``tol * max(1, ||A||_F)``.
    max_sweeps : int
        A full sweep visits every ``(p, q)`` pair once.

    Returns
    -------
    ndarray
        The ``d`` eigenvalues in ascending order.
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    d = A.shape[0]
    if d > 256:
        raise ValueError("symmetric_eigenvalues supports d <= 256")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-9:
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    threshold = tol * max(1.0, np.linalg.norm(A))

    upper = np.triu_indices(d, k=1)

    def off_norm(M):
        return np.sqrt(2.0 * np.sum(M[upper] ** 2))

    for _ in range(max_sweeps):
        if off_norm(A) < threshold:
            return np.sort(np.diag(A))
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                diff = A[q, q] - A[p, p]
                if apq == 0.0:
                    continue
                if abs(apq) < 1e-300 or abs(diff) > 1e150 * abs(apq):
                    # rotation angle underflows; the entry is negligible
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = diff / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q]
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :]
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
    if off_norm(A) < threshold:
        return np.sort(np.diag(A))
    raise EigenConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
