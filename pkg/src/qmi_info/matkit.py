"""Dense symmetric linear-algebra kernels.

All routines take and return plain ``numpy.ndarray`` objects.  Tolerances are
relative to the magnitude of the input unless noted otherwise.
"""

import numpy as np

RANK_TOL = 1e-9
PSD_TOL = 1e-9
SYM_TOL = 1e-9


def _check_finite(A):
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def as_mat(A):
    """Return ``A`` as a finite 2-D float array (scalars become 1x1)."""
    A = _check_finite(A)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(-1, 1)
    elif A.ndim != 2:
        raise ValueError(f"expected a matrix, got array with ndim={A.ndim}")
    return A


def sym(A, sym_tol=SYM_TOL):
    """Validate near-symmetry of ``A`` and return its symmetric part."""
    A = as_mat(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix is not square: {A.shape}")
    scale = max(1.0, np.linalg.norm(A))
    if np.max(np.abs(A - A.T), initial=0.0) > sym_tol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def eigh(A):
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    A = sym(A)
    if A.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    return np.linalg.eigh(A)


def min_eig(A):
    A = sym(A)
    if A.shape[0] == 0:
        return np.inf
    return float(np.linalg.eigvalsh(A)[0])


def max_eig(A):
    A = sym(A)
    if A.shape[0] == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(A)[-1])


def _cutoff(w, rank_tol):
    return rank_tol * max(np.max(np.abs(w), initial=0.0), np.finfo(float).tiny)


def pinv(A, rank_tol=RANK_TOL):
    """Moore-Penrose pseudo-inverse of a symmetric matrix.

    Eigenvalues with ``|lambda| <= rank_tol * max|lambda|`` are treated as zero.
    """
    w, V = eigh(A)
    keep = np.abs(w) > _cutoff(w, rank_tol)
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return sym((V * inv) @ V.T)


def psd_sqrt(A, psd_tol=PSD_TOL):
    """Positive semidefinite square root.

    Negative eigenvalues down to ``-psd_tol * max(1, ||A||_F)`` are clipped to
    zero; anything more negative raises ``ValueError``.
    """
    w, V = eigh(A)
    if w.size and w[0] < -psd_tol * max(1.0, np.linalg.norm(A)):
        raise ValueError(f"matrix is not positive semidefinite (min eig {w[0]:.3e})")
    root = np.sqrt(np.clip(w, 0.0, None))
    return sym((V * root) @ V.T)


def pinv_sqrt(A, rank_tol=RANK_TOL, psd_tol=PSD_TOL):
    """``(A^+)^{1/2}`` for ``A`` positive semidefinite."""
    w, V = eigh(A)
    if w.size and w[0] < -psd_tol * max(1.0, np.linalg.norm(A)):
        raise ValueError(f"matrix is not positive semidefinite (min eig {w[0]:.3e})")
    keep = w > _cutoff(w, rank_tol)
    root = np.zeros_like(w)
    root[keep] = 1.0 / np.sqrt(w[keep])
    return sym((V * root) @ V.T)


def partition(M, split):
    """Split a square matrix into its 2x2 blocks at index ``split``."""
    M = as_mat(M)
    return M[:split, :split], M[:split, split:], M[split:, :split], M[split:, split:]


def schur_complement(M, split, rank_tol=RANK_TOL):
    """Generalized Schur complement ``M|D = A - B D^+ C`` of the lower-right block."""
    M = sym(M)
    if not 0 <= split <= M.shape[0]:
        raise ValueError(f"split {split} out of range for dimension {M.shape[0]}")
    A, B, C, D = partition(M, split)
    if D.shape[0] == 0:
        return A
    return sym(A - B @ pinv(D, rank_tol) @ C)


def range_basis(A, rank_tol=RANK_TOL):
    """Orthonormal basis (as columns) of the image of a symmetric matrix."""
    w, V = eigh(A)
    keep = np.abs(w) > _cutoff(w, rank_tol)
    if not np.any(keep):
        return np.zeros((V.shape[0], 0))
    return V[:, keep]


def null_projector(A, rank_tol=RANK_TOL):
    """Orthogonal projector ``I - A^+ A`` onto ``ker A``."""
    A = sym(A)
    return np.eye(A.shape[0]) - pinv(A, rank_tol) @ A


def kernel_contains(A, B, tol=1e-9, rank_tol=RANK_TOL):
    """True iff ``ker A`` is contained in ``ker B`` (``A`` symmetric)."""
    B = as_mat(B)
    residual = np.linalg.norm(B @ null_projector(A, rank_tol))
    return bool(residual <= tol * max(1.0, np.linalg.norm(B)))


def is_psd(A, tol=PSD_TOL):
    A = sym(A)
    return min_eig(A) >= -tol * max(1.0, np.linalg.norm(A))


def relative_min_eig(A):
    """Smallest eigenvalue scaled by ``max(1, ||A||_F)``."""
    A = sym(A)
    return min_eig(A) / max(1.0, np.linalg.norm(A))


def block_diag(*blocks):
    blocks = [as_mat(b) for b in blocks]
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    i = j = 0
    for b in blocks:
        out[i:i + b.shape[0], j:j + b.shape[1]] = b
        i += b.shape[0]
        j += b.shape[1]
    return out


def spectral_radius(A):
    A = as_mat(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))
