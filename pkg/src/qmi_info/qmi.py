"""Solution sets of quadratic matrix inequalities.

A QMI in the matrix ``Z`` (``r x q``) is ``[I; Z]^T N [I; Z] >= 0`` with ``N``
symmetric of size ``q + r``.  This module covers membership, the
matrix-ellipsoid structure, the explicit parametrization of a matrix
ellipsoid, S-procedure certificates and images under right multiplication.
"""

from dataclasses import dataclass

import numpy as np

from . import matkit
from .lmi import LmiProblem, SolverFailure

STRICT_TOL = 1e-8
MEMBER_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class QmiSet:
    """The set ``{Z : [I; Z]^T n [I; Z] >= 0}`` with ``Z`` of size ``r x q``."""

    n: np.ndarray
    q: int

    def __post_init__(self):
        n = matkit.sym(self.n)
        if not 0 <= self.q <= n.shape[0]:
            raise ValueError(f"q={self.q} incompatible with matrix of size {n.shape[0]}")
        object.__setattr__(self, "n", n)

    @property
    def r(self):
        return self.n.shape[0] - self.q

    @property
    def n11(self):
        return self.n[:self.q, :self.q]

    @property
    def n12(self):
        return self.n[:self.q, self.q:]

    @property
    def n21(self):
        return self.n[self.q:, :self.q]

    @property
    def n22(self):
        return self.n[self.q:, self.q:]

    def value(self, Z):
        """``[I; Z]^T N [I; Z]``."""
        Z = matkit.as_mat(Z)
        if Z.shape != (self.r, self.q):
            raise ValueError(f"Z must be {self.r}x{self.q}, got {Z.shape}")
        S = np.vstack([np.eye(self.q), Z])
        return matkit.sym(S.T @ self.n @ S)

    def scaled(self, c):
        return QmiSet(c * self.n, self.q)


@dataclass(frozen=True, eq=False)
class EllipsoidForm:
    """``[I; Z]^T N [I; Z] = Q^2 - (Z - Zc)^T R^2 (Z - Zc)``."""

    q_mat: np.ndarray
    r_mat: np.ndarray
    center: np.ndarray

    def value(self, Z):
        D = matkit.as_mat(Z) - self.center
        return matkit.sym(self.q_mat @ self.q_mat - D.T @ self.r_mat @ self.r_mat @ D)


@dataclass(frozen=True)
class SlemCertificate:
    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta <= 0:
            raise ValueError(f"need alpha >= 0 and beta > 0, got ({self.alpha}, {self.beta})")


def _norm_scale(N):
    return max(np.linalg.norm(N), np.finfo(float).tiny)


def contains(qset, Z, strict=False, tol=None):
    """Membership of ``Z`` in the (strict) solution set.

    The smallest eigenvalue of the QMI value is compared against ``tol`` after
    dividing by ``||N||_F``.
    """
    if tol is None:
        tol = STRICT_TOL if strict else MEMBER_TOL
    lam = matkit.min_eig(qset.value(Z)) / _norm_scale(qset.n)
    return bool(lam >= tol) if strict else bool(lam >= -tol)


def is_matrix_ellipsoid(qset, tol=1e-9):
    """Check ``N22 <= 0``, ``ker N22 in ker N12`` and ``N|N22 >= 0``.

    Returns ``(flag, form)`` where ``form`` is an :class:`EllipsoidForm` when
    the flag is true and ``None`` otherwise.
    """
    scale = max(1.0, np.linalg.norm(qset.n))
    if qset.r and matkit.max_eig(qset.n22) > tol * scale:
        return False, None
    if not matkit.kernel_contains(qset.n22, qset.n12, tol=max(tol, 1e-9) * 10):
        return False, None
    schur = matkit.schur_complement(qset.n, qset.q)
    if qset.q and matkit.min_eig(schur) < -tol * scale:
        return False, None
    form = EllipsoidForm(
        q_mat=matkit.psd_sqrt(schur, psd_tol=max(tol, matkit.PSD_TOL)),
        r_mat=matkit.psd_sqrt(-qset.n22, psd_tol=max(tol, matkit.PSD_TOL)),
        center=-matkit.pinv(qset.n22) @ qset.n21,
    )
    return True, form


class ExplicitParam:
    """The map ``(M1, M2) -> D`` of :func:`explicit_param` with its factors cached."""

    def __init__(self, qset):
        ok, _ = is_matrix_ellipsoid(qset)
        if not ok:
            raise ValueError("QMI set is not a matrix ellipsoid")
        self.q, self.r = qset.q, qset.r
        n22_pinv = matkit.pinv(qset.n22)
        self.offset = -qset.n12 @ n22_pinv
        self.left = matkit.psd_sqrt(matkit.schur_complement(qset.n, qset.q))
        self.right = matkit.pinv_sqrt(-qset.n22)
        self.null = np.eye(self.r) - qset.n22 @ n22_pinv

    def __call__(self, M1, M2=None):
        q, r = self.q, self.r
        M1 = np.asarray(M1, dtype=float).reshape(q, r)
        if q and r and np.linalg.norm(M1, 2) > 1.0 + 1e-9:
            raise ValueError("parameter M1 violates M1 M1^T <= I")
        D = self.offset + self.left @ M1 @ self.right
        if M2 is not None:
            D = D + np.asarray(M2, dtype=float).reshape(q, r) @ self.null
        return D


def explicit_param(qset, M1, M2=None):
    """Explicit member ``D`` (``q x r``) with ``D^T`` in the solution set.

    ``D = -N12 N22^+ + (N|N22)^{1/2} M1 (-N22)^{-1/2} + M2 (I - N22 N22^+)``
    where ``M1 M1^T <= I``.
    """
    return ExplicitParam(qset)(M1, M2)


def member(qset, M1, M2=None):
    """Member ``Z`` (``r x q``) of the set; transpose of :func:`explicit_param`."""
    return explicit_param(qset, M1, M2).T


def sample_ball(rng, rows, cols, boundary=False):
    """Random matrix with operator norm at most one.

    Singular values of a Gaussian matrix are replaced by ``u**(1/k)`` with
    ``u`` uniform, which pushes mass toward the boundary as the dimension
    grows; with ``boundary=True`` all singular values are one.
    """
    G = rng.standard_normal((rows, cols))
    if G.size == 0:
        return G
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    if boundary:
        s = np.ones_like(s)
    else:
        s = rng.uniform(size=s.size) ** (1.0 / max(rows, cols))
    return (U * s) @ Vt


def slem_preconditions(M, q, tol=1e-9):
    """``M22 <= 0`` and ``ker M22 in ker M12``."""
    M = matkit.sym(M)
    M12, M22 = M[:q, q:], M[q:, q:]
    scale = max(1.0, np.linalg.norm(M))
    if M22.size and matkit.max_eig(M22) > tol * scale:
        return False
    return matkit.kernel_contains(M22, M12, tol=1e-8)


def slem_certificate_check(M, N, cert, q, tol=1e-9):
    """True iff ``M - alpha N - diag(beta I_q, 0) >= -tol I``."""
    M, N = matkit.sym(M), matkit.sym(N)
    if M.shape != N.shape:
        raise ValueError("M and N must have the same size")
    shift = np.zeros_like(M)
    shift[:q, :q] = cert.beta * np.eye(q)
    residual = M - cert.alpha * N - shift
    return matkit.min_eig(residual) >= -tol * max(1.0, np.linalg.norm(residual))


def find_slem_certificate(M, N, q, beta_floor=1e-7):
    """Search for ``(alpha, beta)`` with ``M - alpha N >= diag(beta I, 0)``.

    Maximizes ``beta`` over the two scalars after normalizing ``M`` and ``N``
    to unit Frobenius norm.  Returns ``None`` when no certificate with
    normalized ``beta >= beta_floor`` exists; raises :class:`SolverFailure`
    when the solver breaks down.
    """
    M, N = matkit.sym(M), matkit.sym(N)
    if M.shape != N.shape:
        raise ValueError("M and N must have the same size")
    sM, sN = _norm_scale(M), _norm_scale(N)
    Ms, Ns = M / sM, N / sN
    d = M.shape[0]
    E = np.zeros((d, d))
    E[:q, :q] = np.eye(q)

    prob = LmiProblem("slem")
    alpha = prob.scalar("alpha", nonneg=True)
    beta = prob.scalar("beta")
    prob.psd("slem", Ms - alpha * Ns - beta * E)
    # beta is bounded whenever Z(N) is nonempty; the cap only guards bad input.
    prob.at_most("beta_cap", beta, 1e3)
    prob.at_most("alpha_cap", alpha, 1e6)
    prob.maximize(beta)
    sol = prob.solve()
    if sol.status == "infeasible":
        return None
    if sol.status != "optimal":
        raise SolverFailure(f"S-procedure SDP failed: {sol.message}")
    a, b = max(sol["alpha"], 0.0), sol["beta"]
    if b < beta_floor:
        return None
    # shave a little off beta so the certificate survives re-checking
    cert = SlemCertificate(alpha=a * sM / sN, beta=0.999 * b * sM)
    return cert


def image_transform(qset, W):
    """QMI for ``{Z W : Z in Z(Pi)}``.

    Returns ``(Pi_W, exact)``; the image is always contained in ``Z(Pi_W)`` and
    equals it when ``exact`` is true (``W`` full column rank or ``Pi22``
    nonsingular).
    """
    W = matkit.as_mat(W)
    if W.shape[0] != qset.q:
        raise ValueError(f"W must have {qset.q} rows, got {W.shape[0]}")
    p = W.shape[1]
    T = matkit.block_diag(W, np.eye(qset.r))
    out = QmiSet(T.T @ qset.n @ T, p)
    full_col = np.linalg.matrix_rank(W) == p
    nonsingular = qset.r == 0 or np.linalg.matrix_rank(qset.n22) == qset.r
    return out, bool(full_col or nonsingular)


def multi_slem_check(M, Ns, alphas, tol=1e-9):
    """True iff ``M - sum_j alpha_j N_j >= -tol I``.

    Sufficient for ``intersection_j Z(N_j)`` to be contained in ``Z(M)``.
    """
    M = matkit.sym(M)
    if len(Ns) != len(alphas):
        raise ValueError("need one multiplier per QMI")
    if any(a < 0 for a in alphas):
        raise ValueError("multipliers must be nonnegative")
    residual = M.copy()
    for a, Nj in zip(alphas, Ns):
        residual -= a * matkit.sym(Nj)
    return matkit.min_eig(residual) >= -tol * max(1.0, np.linalg.norm(residual))
