"""Consistency matrices and controller-synthesis LMIs.

Every LMI builder works on plain arrays and on cvxpy expressions alike, so
the matrix handed to the solver and the one re-evaluated afterwards come from
the same code.  Certification never trusts the solver status alone: the
returned variables are plugged back into the LMIs with numpy.
"""

from dataclasses import dataclass, field
import time

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from . import matkit
from .datagen import SingleModel, StructuredModel, ar_shift_matrices, consistency_matrix
from .lmi import LmiProblem
from .qmi import QmiSet, is_matrix_ellipsoid

CERTIFIED = "informative_certified"
NOT_CERTIFIED = "not_certified"
SOLVER_ERROR = "solver_error"

MARGIN = 1e-6          # strict inequalities: >= MARGIN * I in normalized units
BETA_FLOOR = 1e-5      # smallest normalized beta accepted as positive
BETA_BACKOFF = 0.999   # certify with a slightly smaller beta than the optimum
RESIDUAL_TOL = 1e-7    # relative min-eig accepted on re-evaluation


# -- results -----------------------------------------------------------------

@dataclass
class SynthesisResult:
    status: str
    method: str
    k: np.ndarray | None = None
    p_or_y: np.ndarray | None = None
    l: np.ndarray | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    exact: bool = False
    aux: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    message: str = ""
    wall_time_ms: float = 0.0

    @property
    def certified(self):
        return self.status == CERTIFIED

    def to_dict(self, timing=True):
        def enc(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: enc(v[k]) for k in sorted(v)}
            return v
        out = {
            "status": self.status,
            "method": self.method,
            "exact": self.exact,
            "K": enc(self.k),
            "certificates": {"alpha": enc(self.alpha), "beta": enc(self.beta),
                             "P_or_Y": enc(self.p_or_y), "L": enc(self.l)},
            "gamma": enc(self.gamma),
            "residuals": enc(self.residuals),
            "aux": enc(self.aux),
            "message": self.message,
        }
        if timing:
            out["wall_time_ms"] = self.wall_time_ms
        return out


# -- helpers -----------------------------------------------------------------

def _blocks(rows):
    if any(isinstance(b, cp.Expression) for row in rows for b in row):
        return cp.bmat(rows)
    return np.block([[np.asarray(b, dtype=float) for b in row] for row in rows])


def _zeros(r, c):
    return np.zeros((r, c))


def _pad(N, dim):
    k = N.shape[0]
    if isinstance(N, cp.Expression):
        return _blocks([[N, _zeros(k, dim - k)], [_zeros(dim - k, k), _zeros(dim - k, dim - k)]])
    out = np.zeros((dim, dim))
    out[:k, :k] = N
    return out


def _spectral_scale(N):
    s = np.linalg.norm(N, 2)
    return s if s > 0 else 1.0


def _rel_min_eig(A):
    return matkit.relative_min_eig(matkit.sym(A, sym_tol=1e-6))


def _finite(*vals):
    return all(v is not None and np.all(np.isfinite(v)) for v in vals)


def necessity_flag(e, phi_hat, q):
    """True when the LMI conditions are also necessary.

    That is the case if ``im E`` contains ``im [I_q 0]^T`` or ``phi22 < 0``.
    """
    e = matkit.as_mat(e)
    head = np.zeros((e.shape[0], q))
    head[:q] = np.eye(q)
    proj = e @ np.linalg.pinv(e)
    covers = np.linalg.norm(head - proj @ head) <= 1e-9 * max(1.0, np.sqrt(q))
    n22 = phi_hat.n22
    negdef = n22.size == 0 or matkit.max_eig(n22) < -1e-9 * max(1.0, np.linalg.norm(n22))
    return bool(covers or negdef)


# -- consistency matrix ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConsistencyMatrix:
    n_mat: QmiSet
    in_pi: bool
    n22_rank: int
    v_basis: np.ndarray


def build_n(data, model):
    """``N = [E X] phi_hat [E X]^T`` with its matrix-ellipsoid diagnostics."""
    if not isinstance(model, SingleModel):
        raise TypeError("build_n needs a single-QMI perturbation model")
    N = QmiSet(consistency_matrix(data, model), data.n)
    in_pi, _ = is_matrix_ellipsoid(N)
    V = matkit.range_basis(N.n22)
    return ConsistencyMatrix(N, in_pi, V.shape[1], V)


def n_of_phi(data, Phi):
    """``[I X] Phi [I X]^T`` (affine in ``Phi``; accepts cvxpy expressions)."""
    G = np.hstack([np.eye(data.n_d), data.stacked()])
    return G @ Phi @ G.T


# -- LMI builders (numpy or cvxpy) -------------------------------------------

def qstab_lmi(P, L, beta, alpha, N):
    """``M(P, L, beta) - alpha diag(N, 0_n)``."""
    n, m = P.shape[0], L.shape[0]
    I = np.eye(n)
    core = _blocks([
        [P - beta * I, _zeros(n, n), _zeros(n, m), _zeros(n, n)],
        [_zeros(n, n), -P, -L.T, _zeros(n, n)],
        [_zeros(m, n), -L, _zeros(m, m), L],
        [_zeros(n, n), _zeros(n, n), L.T, P],
    ])
    return core - alpha * _pad(N, 3 * n + m)


def qstab_interior_lmi(Pb, Yb, alpha_b, Nbar):
    """Reduced LMI on the range of ``N22`` (variables ``Pb``, ``Yb``, ``alpha_b``)."""
    n, k = Pb.shape[0], Yb.shape[0]
    core = _blocks([
        [Pb, _zeros(n, k), _zeros(n, n)],
        [_zeros(k, n), _zeros(k, k), Yb],
        [_zeros(n, n), Yb.T, Pb],
    ])
    return core - alpha_b * _pad(Nbar, 2 * n + k)


def _perf_lmi(Y, L, beta, alpha, N, C, D, corner, shift):
    n, m, p = Y.shape[0], L.shape[0], C.shape[0]
    I = np.eye(n)
    Cyl = C @ Y + D @ L
    core = _blocks([
        [Y - shift * I - beta * I, _zeros(n, n), _zeros(n, m), _zeros(n, n), _zeros(n, p)],
        [_zeros(n, n), _zeros(n, n), _zeros(n, m), Y, _zeros(n, p)],
        [_zeros(m, n), _zeros(m, n), _zeros(m, m), L, _zeros(m, p)],
        [_zeros(n, n), Y, L.T, Y, Cyl.T],
        [_zeros(p, n), _zeros(p, n), _zeros(p, m), Cyl, corner * np.eye(p)],
    ])
    return core - alpha * _pad(N, 3 * n + m + p)


def h2_lmi(Y, L, beta, alpha, N, C, D):
    return _perf_lmi(Y, L, beta, alpha, N, C, D, 1.0, 0.0)


def hinf_lmi(Y, L, beta, alpha, N, C, D, gamma):
    return _perf_lmi(Y, L, beta, alpha, N, C, D, gamma**2, 1.0)


def output_block(Y, L, C, D, corner):
    """``[[Y, C_YL^T], [C_YL, corner I]]``."""
    Cyl = C @ Y + D @ L
    return _blocks([[Y, Cyl.T], [Cyl, corner * np.eye(C.shape[0])]])


def trace_block(Z, Y):
    n = Y.shape[0]
    return _blocks([[Z, np.eye(n)], [np.eye(n), Y]])


def ar_lmi(P, L, beta, alpha, N, p, m, order):
    """Lifted-AR stabilization LMI; blocks ``(p, nx, m, nx - p, nx)``."""
    nx = P.shape[0]
    J1, J2 = ar_shift_matrices(p, m, order)
    Jpl = J1 @ P + J2 @ L
    P11, P12, P22 = P[:p, :p], P[:p, p:], P[p:, p:]
    h = nx - p
    core = _blocks([
        [P11 - beta * np.eye(p), _zeros(p, nx), _zeros(p, m), P12, _zeros(p, nx)],
        [_zeros(nx, p), _zeros(nx, nx), _zeros(nx, m), _zeros(nx, h), P],
        [_zeros(m, p), _zeros(m, nx), _zeros(m, m), _zeros(m, h), L],
        [P12.T, _zeros(h, nx), _zeros(h, m), P22, Jpl],
        [_zeros(nx, p), P, L.T, Jpl.T, P],
    ])
    return core - alpha * _pad(N, p + 2 * nx + m + h)


def ar_tail_lmi(P, L, p, m, order):
    J1, J2 = ar_shift_matrices(p, m, order)
    Jpl = J1 @ P + J2 @ L
    return _blocks([[P[p:, p:], Jpl], [Jpl.T, P]])


# -- pre-Schur objective matrices (numpy only) -------------------------------

def m_qstab(P, K):
    IK = np.vstack([np.eye(P.shape[0]), K])
    return matkit.block_diag(P, -IK @ P @ IK.T)


def m_h2(Y, L, C, D):
    Cyl = C @ Y + D @ L
    YL = np.vstack([Y, L])
    return matkit.block_diag(Y, -YL @ np.linalg.solve(Y - Cyl.T @ Cyl, YL.T))


def m_hinf(Y, L, C, D, gamma):
    Cyl = C @ Y + D @ L
    YL = np.vstack([Y, L])
    W = Y - Cyl.T @ Cyl / gamma**2
    return matkit.block_diag(Y - np.eye(Y.shape[0]), -YL @ np.linalg.solve(W, YL.T))


def m_ar(P, K, p, m, order):
    J1, J2 = ar_shift_matrices(p, m, order)
    JK = J1 + J2 @ K
    IK = np.vstack([np.eye(P.shape[0]), K])
    Zm = P[p:, p:] - JK @ P @ JK.T
    head = matkit.block_diag(P[:p, :p], -IK @ P @ IK.T)
    W = np.vstack([P[:p, p:], -IK @ P @ JK.T])
    return matkit.sym(head - W @ np.linalg.solve(Zm, W.T), sym_tol=1e-6)


def slem_residual(M, N, alpha, beta, q):
    """Relative min-eig of ``M - alpha N - diag(beta I_q, 0)``."""
    shift = np.zeros_like(M)
    shift[:q, :q] = beta * np.eye(q)
    return _rel_min_eig(M - alpha * N - shift)


# -- generic solve plumbing --------------------------------------------------

def _solver_failed(method, sol, t0, exact=False):
    return SynthesisResult(SOLVER_ERROR, method, exact=exact, message=sol.message,
                           wall_time_ms=1e3 * (time.perf_counter() - t0))


def _not_certified(method, t0, message, exact=False, **kw):
    return SynthesisResult(NOT_CERTIFIED, method, exact=exact, message=message,
                           wall_time_ms=1e3 * (time.perf_counter() - t0), **kw)


def _gate(residuals, beta_norm, strict):
    """Certification decision from re-evaluated residuals."""
    if beta_norm is None or beta_norm < BETA_FLOOR:
        return False, f"beta {beta_norm!r} below floor"
    for name, val in residuals.items():
        if name in strict:
            if not val > 0:
                return False, f"strict constraint {name} not positive ({val:.3e})"
        elif val < -RESIDUAL_TOL:
            return False, f"constraint {name} violated on re-check ({val:.3e})"
    return True, ""


def _qstab_problem(Ns, n, m, method, beta_fixed=None):
    """Stabilization LMI for a fixed ``N``; with ``beta_fixed`` it maximizes an interior slack."""
    prob = LmiProblem(method)
    P = prob.symmetric("P", n)
    L = prob.matrix("L", m, n)
    alpha = prob.scalar("alpha", nonneg=True)
    if beta_fixed is None:
        beta = prob.scalar("beta")
        prob.psd("main", qstab_lmi(P, L, beta, alpha, Ns))
        prob.at_most("beta_cap", beta, 1.0)
        prob.maximize(beta)
    else:
        t = prob.scalar("t")
        prob.psd("main", qstab_lmi(P, L, beta_fixed, alpha, Ns) - t * np.eye(3 * n + m))
        prob.at_most("t_cap", t, 1.0)
        prob.maximize(t)
    prob.psd("P_pos", P, margin=MARGIN)
    prob.psd("P_cap", np.eye(n) - P)
    return prob


def _recentre_needed(ok, b):
    """Re-solve for an interior point when only the re-check failed."""
    return not ok and b is not None and b >= 2 * BETA_FLOOR


def _qstab_core(N, n, m, method, t0, exact, aux=None):
    """Solve ``M(P, L, beta) - alpha diag(N, 0) >= 0`` for a fixed ``N``.

    The optimum of ``beta`` sits on the boundary of the LMI; when the
    re-evaluated residual misses the tolerance there, ``beta`` is halved and
    the slack of the LMI is maximized instead.
    """
    s = _spectral_scale(N)
    Ns = N / s
    sol = _qstab_problem(Ns, n, m, method).solve()
    if sol.status == "error":
        return _solver_failed(method, sol, t0, exact)
    if sol.status != "optimal":
        return _not_certified(method, t0, f"LMI {sol.status}", exact, aux=aux or {})

    def evaluate(sol, b):
        Pv, Lv, a_s = sol["P"], sol["L"], max(sol["alpha"], 0.0)
        if not _finite(Pv, Lv, a_s, b):
            return None
        alpha_v = a_s / s
        K = Lv @ np.linalg.inv(Pv)
        residuals = {
            "main": _rel_min_eig(qstab_lmi(Pv, Lv, b, alpha_v, N)),
            "P_pos": matkit.min_eig(Pv),
            "pre_schur": slem_residual(m_qstab(Pv, K), N, alpha_v, b, n),
        }
        ok, why = _gate({k: residuals[k] for k in ("main", "P_pos")}, b, {"P_pos"})
        return ok, why, (K, Pv, Lv, alpha_v, b, residuals)

    b = BETA_BACKOFF * sol["beta"]
    out = evaluate(sol, b)
    if out is None:
        return _solver_failed(method, sol, t0, exact)
    if _recentre_needed(out[0], b):
        sol2 = _qstab_problem(Ns, n, m, method, beta_fixed=0.5 * b).solve()
        if sol2.status == "optimal":
            out2 = evaluate(sol2, 0.5 * b)
            if out2 is not None and out2[0]:
                out = out2
    ok, why, (K, Pv, Lv, alpha_v, b, residuals) = out
    return SynthesisResult(CERTIFIED if ok else NOT_CERTIFIED, method, K, Pv, Lv, alpha_v, b,
                           exact=exact, aux=aux or {}, residuals=residuals, message=why,
                           wall_time_ms=1e3 * (time.perf_counter() - t0))


# -- state-feedback stabilization --------------------------------------------

def synth_qstab(data, model):
    """Quadratic stabilization from the full LMI in ``(P, L, alpha, beta)``."""
    t0 = time.perf_counter()
    cm = build_n(data, model)
    exact = necessity_flag(model.e, model.phi_hat, data.n)
    return _qstab_core(cm.n_mat.n, data.n, data.m, "qstab", t0, exact,
                       aux={"in_pi": cm.in_pi, "n22_rank": cm.n22_rank})


def _max_beta_qstab(P, L, alpha, N, iters=60):
    """Largest ``beta`` keeping the full stabilization LMI PSD (bisection)."""
    scale = max(1.0, np.linalg.norm(qstab_lmi(P, L, 0.0, alpha, N)))

    def ok(b):
        return matkit.min_eig(qstab_lmi(P, L, b, alpha, N)) >= -1e-10 * scale

    if not ok(0.0):
        return 0.0
    lo, hi = 0.0, matkit.max_eig(P)
    if ok(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def synth_qstab_stable(data, model):
    """Stabilization through the reduced LMI on ``im N22``.

    Solves for ``(Pb, Yb, alpha_b)`` with ``Pb = V+ Yb``, recovers
    ``P = Pb``, ``L = V- Yb``, ``alpha = alpha_b`` and then picks ``beta`` for
    the full LMI by bisection.
    """
    method = "qstab-stable"
    t0 = time.perf_counter()
    cm = build_n(data, model)
    exact = necessity_flag(model.e, model.phi_hat, data.n)
    n = data.n
    aux = {"in_pi": cm.in_pi, "n22_rank": cm.n22_rank}
    if not cm.in_pi:
        return _not_certified(method, t0, "consistency matrix is not a matrix ellipsoid", exact, aux=aux)
    V = cm.v_basis
    k = V.shape[1]
    if k == 0:
        return _not_certified(method, t0, "N22 vanishes; no stabilizing gain can be certified", exact, aux=aux)
    N = cm.n_mat.n
    s = _spectral_scale(N)
    T = matkit.block_diag(np.eye(n), V)
    Nbar = matkit.sym(T.T @ N @ T) / s
    Vp, Vm = V[:n], V[n:]

    prob = LmiProblem(method)
    Pb = prob.symmetric("Pb", n)
    Yb = prob.matrix("Yb", k, n)
    ab = prob.scalar("alpha_b", nonneg=True)
    t = prob.scalar("t")
    prob.psd("interior", qstab_interior_lmi(Pb, Yb, ab, Nbar) - t * np.eye(2 * n + k))
    prob.equal("link", Pb, Vp @ Yb)
    prob.at_least("alpha_pos", ab, t)
    prob.psd("P_cap", np.eye(n) - Pb)
    prob.at_most("t_cap", t, 1.0)
    prob.maximize(t)
    sol = prob.solve()
    if sol.status == "error":
        return _solver_failed(method, sol, t0, exact)
    if sol.status != "optimal":
        return _not_certified(method, t0, f"reduced LMI {sol.status}", exact, aux=aux)
    tv = sol["t"]
    Pv = matkit.sym(sol["Pb"], sym_tol=1e-6)
    Ybv = sol["Yb"]
    a_b = max(sol["alpha_b"], 0.0)
    if not _finite(Pv, Ybv, a_b, tv):
        return _solver_failed(method, sol, t0, exact)
    if tv < BETA_FLOOR:
        return _not_certified(method, t0, f"reduced LMI margin {tv:.3e} too small", exact, aux=aux)
    Lv = Vm @ Ybv
    alpha_v = a_b / s
    b = 0.5 * _max_beta_qstab(Pv, Lv, alpha_v, N)
    K = Lv @ np.linalg.inv(Pv)
    aux.update({"alpha_bar": a_b / s, "Y_bar": Ybv, "P_bar": Pv, "V": V, "interior_margin": tv})
    residuals = {
        "interior": _rel_min_eig(qstab_interior_lmi(Pv, Ybv, a_b / s, Nbar * s)),
        "link": float(np.linalg.norm(Pv - Vp @ Ybv)),
        "main": _rel_min_eig(qstab_lmi(Pv, Lv, b, alpha_v, N)),
        "P_pos": matkit.min_eig(Pv),
        "pre_schur": slem_residual(m_qstab(Pv, K), N, alpha_v, b, n),
    }
    gate = {k: residuals[k] for k in ("interior", "main", "P_pos")}
    ok, why = _gate(gate, b, {"P_pos"})
    if ok and residuals["link"] > 1e-6 * max(1.0, np.linalg.norm(Pv)):
        ok, why = False, "equality link violated"
    return SynthesisResult(CERTIFIED if ok else NOT_CERTIFIED, method, K, Pv, Lv, alpha_v, b,
                           exact=exact, aux=aux, residuals=residuals, message=why,
                           wall_time_ms=1e3 * (time.perf_counter() - t0))


# -- H2 / Hinf ---------------------------------------------------------------

def _perf_setup(data, model, sys_cd):
    C, D = (matkit.as_mat(x) for x in sys_cd)
    if C.shape[1] != data.n or D.shape != (C.shape[0], data.m):
        raise ValueError("(C, D) shapes do not match the data")
    cm = build_n(data, model)
    exact = necessity_flag(model.e, model.phi_hat, data.n)
    return C, D, cm, exact


def _solve_h2(data, model, sys_cd, gamma, method):
    t0 = time.perf_counter()
    C, D, cm, exact = _perf_setup(data, model, sys_cd)
    n, m = data.n, data.m
    N = cm.n_mat.n
    s = _spectral_scale(N)
    aux = {"in_pi": cm.in_pi}
    prob = LmiProblem(method)
    Y = prob.symmetric("Y", n)
    Z = prob.symmetric("Z", n)
    L = prob.matrix("L", m, n)
    alpha = prob.scalar("alpha", nonneg=True)
    beta = prob.scalar("beta")
    prob.psd("main", h2_lmi(Y, L, beta, alpha, N / s, C, D))
    prob.psd("output", output_block(Y, L, C, D, 1.0), margin=MARGIN)
    prob.psd("trace", trace_block(Z, Y))
    prob.psd("Y_pos", Y, margin=MARGIN)
    if gamma is None:
        J = prob.scalar("J")
        prob.at_least("beta_min", beta, 2 * BETA_FLOOR)
        prob.at_most("trace_J", cp.trace(Z) + MARGIN, J)
        prob.minimize(J)
    else:
        prob.at_most("trace_gamma", cp.trace(Z), gamma**2 - MARGIN * max(1.0, gamma**2))
        prob.at_most("beta_cap", beta, 1.0)
        prob.maximize(beta)
    sol = prob.solve()
    if sol.status == "error":
        return _solver_failed(method, sol, t0, exact)
    if sol.status != "optimal":
        return _not_certified(method, t0, f"LMI {sol.status}", exact, aux=aux)
    Yv, Zv, Lv = sol["Y"], sol["Z"], sol["L"]
    a_v, b = max(sol["alpha"], 0.0) / s, BETA_BACKOFF * sol["beta"]
    if not _finite(Yv, Zv, Lv, a_v, b):
        return _solver_failed(method, sol, t0, exact)
    if gamma is None and not sol["J"] > 0:
        return _not_certified(method, t0, f"optimal J = {sol['J']:.3e} is not positive", exact, aux=aux)
    g = gamma if gamma is not None else float(np.sqrt(sol["J"]))
    K = Lv @ np.linalg.inv(Yv)
    residuals = {
        "main": _rel_min_eig(h2_lmi(Yv, Lv, b, a_v, N, C, D)),
        "output": _rel_min_eig(output_block(Yv, Lv, C, D, 1.0)),
        "trace": _rel_min_eig(trace_block(Zv, Yv)),
        "Y_pos": matkit.min_eig(Yv),
        "trace_gap": g**2 - float(np.trace(Zv)),
    }
    try:
        residuals["pre_schur"] = slem_residual(m_h2(Yv, Lv, C, D), N, a_v, b, n)
    except np.linalg.LinAlgError:
        residuals["pre_schur"] = -np.inf
    gate = {k: residuals[k] for k in ("main", "output", "trace", "Y_pos", "trace_gap")}
    ok, why = _gate(gate, b, {"output", "Y_pos", "trace_gap"})
    aux["Z"] = Zv
    return SynthesisResult(CERTIFIED if ok else NOT_CERTIFIED, method, K, Yv, Lv, a_v, b, g,
                           exact=exact, aux=aux, residuals=residuals, message=why,
                           wall_time_ms=1e3 * (time.perf_counter() - t0))


def synth_h2(data, model, sys_cd, gamma):
    """H2 performance ``gamma`` for every consistent system."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return _solve_h2(data, model, sys_cd, float(gamma), "h2")


def synth_h2_optimal(data, model, sys_cd):
    """Smallest certified H2 bound; ``gamma = sqrt(J*)``."""
    return _solve_h2(data, model, sys_cd, None, "h2opt")


def synth_hinf(data, model, sys_cd, gamma):
    """Hinf performance ``gamma`` for every consistent system."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    method = "hinf"
    t0 = time.perf_counter()
    C, D, cm, exact = _perf_setup(data, model, sys_cd)
    n, m = data.n, data.m
    N = cm.n_mat.n
    s = _spectral_scale(N)
    aux = {"in_pi": cm.in_pi}
    g2 = float(gamma) ** 2
    prob = LmiProblem(method)
    Y = prob.symmetric("Y", n)
    L = prob.matrix("L", m, n)
    alpha = prob.scalar("alpha", nonneg=True)
    beta = prob.scalar("beta")
    prob.psd("main", hinf_lmi(Y, L, beta, alpha, N / s, C, D, gamma))
    prob.psd("output", output_block(Y, L, C, D, g2), margin=MARGIN)
    prob.psd("Y_pos", Y, margin=MARGIN)
    prob.at_most("beta_cap", beta, 1.0)
    prob.maximize(beta)
    sol = prob.solve()
    if sol.status == "error":
        return _solver_failed(method, sol, t0, exact)
    if sol.status != "optimal":
        return _not_certified(method, t0, f"LMI {sol.status}", exact, aux=aux)
    Yv, Lv = sol["Y"], sol["L"]
    a_v, b = max(sol["alpha"], 0.0) / s, BETA_BACKOFF * sol["beta"]
    if not _finite(Yv, Lv, a_v, b):
        return _solver_failed(method, sol, t0, exact)
    K = Lv @ np.linalg.inv(Yv)
    residuals = {
        "main": _rel_min_eig(hinf_lmi(Yv, Lv, b, a_v, N, C, D, gamma)),
        "output": _rel_min_eig(output_block(Yv, Lv, C, D, g2)),
        "Y_pos": matkit.min_eig(Yv),
    }
    try:
        residuals["pre_schur"] = slem_residual(m_hinf(Yv, Lv, C, D, gamma), N, a_v, b, n)
    except np.linalg.LinAlgError:
        residuals["pre_schur"] = -np.inf
    ok, why = _gate({k: residuals[k] for k in ("main", "output", "Y_pos")}, b, {"output", "Y_pos"})
    return SynthesisResult(CERTIFIED if ok else NOT_CERTIFIED, method, K, Yv, Lv, a_v, b, float(gamma),
                           exact=exact, aux=aux, residuals=residuals, message=why,
                           wall_time_ms=1e3 * (time.perf_counter() - t0))


# -- autoregressive models ---------------------------------------------------

def synth_ar(data, model, order):
    """Stabilization of a lifted AR model by ``u = K x``."""
    method = "ar"
    t0 = time.perf_counter()
    if data.kind != "ar":
        raise ValueError("synth_ar needs AR data")
    p, m = data.n, data.m
    nx = data.nx
    if nx != (p + m) * order:
        raise ValueError(f"regressor has {nx} rows, expected {(p + m) * order}")
    cm = build_n(data, model)
    exact = necessity_flag(model.e, model.phi_hat, p)
    N = cm.n_mat.n
    s = _spectral_scale(N)
    aux = {"in_pi": cm.in_pi}
    prob = LmiProblem(method)
    P = prob.symmetric("P", nx)
    L = prob.matrix("L", m, nx)
    alpha = prob.scalar("alpha", nonneg=True)
    beta = prob.scalar("beta")
    prob.psd("main", ar_lmi(P, L, beta, alpha, N / s, p, m, order))
    prob.psd("tail", ar_tail_lmi(P, L, p, m, order), margin=MARGIN)
    prob.psd("P_pos", P, margin=MARGIN)
    prob.psd("P_cap", np.eye(nx) - P)
    prob.at_most("beta_cap", beta, 1.0)
    prob.maximize(beta)
    sol = prob.solve()
    if sol.status == "error":
        return _solver_failed(method, sol, t0, exact)
    if sol.status != "optimal":
        return _not_certified(method, t0, f"LMI {sol.status}", exact, aux=aux)
    Pv, Lv = sol["P"], sol["L"]
    a_v, b = max(sol["alpha"], 0.0) / s, BETA_BACKOFF * sol["beta"]
    if not _finite(Pv, Lv, a_v, b):
        return _solver_failed(method, sol, t0, exact)
    K = Lv @ np.linalg.inv(Pv)
    residuals = {
        "main": _rel_min_eig(ar_lmi(Pv, Lv, b, a_v, N, p, m, order)),
        "tail": _rel_min_eig(ar_tail_lmi(Pv, Lv, p, m, order)),
        "P_pos": matkit.min_eig(Pv),
    }
    try:
        residuals["pre_schur"] = slem_residual(m_ar(Pv, K, p, m, order), N, a_v, b, p)
    except np.linalg.LinAlgError:
        residuals["pre_schur"] = -np.inf
    ok, why = _gate({k: residuals[k] for k in ("main", "tail", "P_pos")}, b, {"tail", "P_pos"})
    return SynthesisResult(CERTIFIED if ok else NOT_CERTIFIED, method, K, Pv, Lv, a_v, b,
                           exact=exact, aux=aux, residuals=residuals, message=why,
                           wall_time_ms=1e3 * (time.perf_counter() - t0))


# -- structured perturbations ------------------------------------------------

@dataclass(frozen=True, eq=False)
class OuterPhiData:
    """Constant matrices of the outer-approximation LMI."""

    g: np.ndarray          # [[I, 0], [0, U]]
    psi: sp.csc_matrix     # column j is vec(Psi_j), column-major
    dim: int
    n_d: int
    T: int


def outer_phi_data(model):
    if not isinstance(model, StructuredModel):
        raise TypeError("outer approximation needs a structured model")
    nd, T = model.n_d, model.T
    sizes = [t.phi.r for t in model.terms]
    tot = int(sum(sizes))
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    U = np.zeros((tot, T))
    cols = []
    dim = nd + tot
    for j, t in enumerate(model.terms):
        Uj = np.zeros((tot, sizes[j]))
        Uj[offsets[j]:offsets[j + 1]] = np.eye(sizes[j])
        U += Uj @ t.f
        H = matkit.block_diag(t.e, Uj)
        Psi = H @ t.phi.n @ H.T
        cols.append(sp.csc_matrix(Psi.reshape(-1, 1, order="F")))
    G = matkit.block_diag(np.eye(nd), U)
    return OuterPhiData(G, sp.hstack(cols).tocsc(), dim, nd, T)


def outer_phi_lmi(Phi, alphas, od):
    """``G Phi G^T - sum_j alpha_j Psi_j``."""
    if isinstance(Phi, cp.Expression) or isinstance(alphas, cp.Expression):
        acc = cp.reshape(od.psi @ alphas, (od.dim, od.dim), order="F")
    else:
        acc = (od.psi @ np.asarray(alphas, dtype=float)).reshape(od.dim, od.dim, order="F")
    return od.g @ Phi @ od.g.T - acc


def scalar_term_times(model):
    """Time index of each term when every term is a scalar entry per sample.

    Returns ``None`` unless each term has ``r = 1``, ``F_j`` a unit row,
    ``phi_12 = 0`` and ``phi_22 < 0``, and every time index is hit.
    """
    times = []
    for t in model.terms:
        n = t.phi.n
        if t.phi.r != 1 or np.any(t.phi.n12 != 0) or not n[-1, -1] < 0:
            return None
        f = t.f.ravel()
        nz = np.flatnonzero(f)
        if nz.size != 1 or f[nz[0]] != 1.0:
            return None
        times.append(int(nz[0]))
    if set(times) != set(range(model.T)):
        return None
    return np.array(times)


def _compressed_outer(model, prob, Phi, alphas, times):
    """Outer-approximation LMI with the lifted noise coordinates eliminated.

    When every term is a scalar entry of one time sample, minimizing the
    lifted quadratic form over the noise coordinates that sum to ``u_t``
    leaves the weight ``(sum_j 1/(alpha_j w_j))^{-1}`` on ``u_t^2``, with
    ``w_j = -phi_j,22``.  The harmonic sum is kept convex through the
    hypograph variables ``h_t`` and one rotated cone per term, so the LMI in
    ``Phi`` has size ``n_d + T`` instead of ``n_d + J``.
    """
    nd, T, J = model.n_d, model.T, len(model.terms)
    top = sp.hstack([sp.csc_matrix((t.e @ t.phi.n11 @ t.e.T).reshape(-1, 1, order="F"))
                     for t in model.terms]).tocsc()
    w = np.array([-t.phi.n[-1, -1] for t in model.terms])
    group = sp.csr_matrix((np.ones(J), (times, np.arange(J))), shape=(T, J))
    h = prob.vector("h", T)
    s_ = prob.vector("s", J, nonneg=True)
    lower = cp.reshape(top @ alphas, (nd, nd), order="F")
    shift = _blocks([[lower, np.zeros((nd, T))], [np.zeros((T, nd)), -cp.diag(h)]])
    prob.psd("outer", Phi - shift)
    prob.rotated_cone("harmonic", s_, cp.multiply(w, alphas), h[times])
    prob.at_most("harmonic_sum", group @ s_ - h, 0.0)


def build_outer_phi_lmi(model, prob=None, compress=None):
    """Add the outer-approximation LMI in ``(Phi, alpha_1..alpha_J)`` to ``prob``.

    ``compress=None`` uses the reduced form whenever the model allows it; the
    two forms have the same feasible ``(Phi, alpha)``.
    """
    od = outer_phi_data(model)
    prob = prob or LmiProblem("outer-phi")
    Phi = prob.symmetric("Phi", od.n_d + od.T)
    alphas = prob.vector("alphas", len(model.terms), nonneg=True)
    times = scalar_term_times(model)
    if compress and times is None:
        raise ValueError("model terms do not allow the reduced outer LMI")
    if compress is None:
        compress = times is not None
    if compress:
        _compressed_outer(model, prob, Phi, alphas, times)
    else:
        prob.psd("outer", outer_phi_lmi(Phi, alphas, od))
    return prob, od


def _codesign_problem(data, model, alpha, compress, method, beta_fixed=None):
    n, m = data.n, data.m
    prob, od = build_outer_phi_lmi(model, LmiProblem(method), compress)
    Phi = prob["Phi"]
    P = prob.symmetric("P", n)
    L = prob.matrix("L", m, n)
    if beta_fixed is None:
        beta = prob.scalar("beta")
        prob.psd("main", qstab_lmi(P, L, beta, alpha, n_of_phi(data, Phi)))
        prob.at_most("beta_cap", beta, 1.0)
        prob.maximize(beta)
    else:
        t = prob.scalar("t")
        prob.psd("main", qstab_lmi(P, L, beta_fixed, alpha, n_of_phi(data, Phi)) - t * np.eye(3 * n + m))
        prob.at_most("t_cap", t, 1.0)
        prob.maximize(t)
    prob.psd("P_pos", P, margin=MARGIN)
    prob.psd("P_cap", np.eye(n) - P)
    return prob, od


def synth_structured_codesign(data, model, alpha=1.0, compress=None):
    """Joint choice of the outer QMI and a stabilizing gain.

    ``alpha`` multiplies ``N(Phi)`` in the stabilization LMI; the default
    ``1`` gives the convex problem, other positive values give the same
    problem restricted to that multiplier.  As in the fixed-``N`` case, a
    failed re-check at the optimal ``beta`` triggers one interior re-solve
    at half that ``beta``.
    """
    method = "structured-codesign"
    t0 = time.perf_counter()
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    n = data.n
    if model.n_d != data.n_d or model.T != data.T:
        raise ValueError("structured model does not match the data dimensions")
    prob, od = _codesign_problem(data, model, alpha, compress, method)
    sol = prob.solve()
    if sol.status == "error":
        return _solver_failed(method, sol, t0)
    if sol.status != "optimal":
        return _not_certified(method, t0, f"LMI {sol.status}")

    def evaluate(sol, b):
        Pv, Lv = sol["P"], sol["L"]
        Phiv = matkit.sym(sol["Phi"], sym_tol=1e-6)
        av = np.maximum(sol["alphas"], 0.0)
        if not _finite(Pv, Lv, b, Phiv, av):
            return None
        N = n_of_phi(data, Phiv)
        K = Lv @ np.linalg.inv(Pv)
        residuals = {
            "outer": _rel_min_eig(outer_phi_lmi(Phiv, av, od)),
            "main": _rel_min_eig(qstab_lmi(Pv, Lv, b, alpha, N)),
            "P_pos": matkit.min_eig(Pv),
            "pre_schur": slem_residual(m_qstab(Pv, K), N, alpha, b, n),
        }
        ok, why = _gate({k: residuals[k] for k in ("outer", "main", "P_pos")}, b, {"P_pos"})
        return ok, why, (K, Pv, Lv, b, residuals, {"Phi": Phiv, "alphas": av, "N": N})

    b = BETA_BACKOFF * sol["beta"]
    out = evaluate(sol, b)
    if out is None:
        return _solver_failed(method, sol, t0)
    if _recentre_needed(out[0], b):
        sol2 = _codesign_problem(data, model, alpha, compress, method, beta_fixed=0.5 * b)[0].solve()
        if sol2.status == "optimal":
            out2 = evaluate(sol2, 0.5 * b)
            if out2 is not None and out2[0]:
                out = out2
    ok, why, (K, Pv, Lv, b, residuals, aux) = out
    return SynthesisResult(CERTIFIED if ok else NOT_CERTIFIED, method, K, Pv, Lv, float(alpha), b,
                           aux=aux, residuals=residuals, message=why,
                           wall_time_ms=1e3 * (time.perf_counter() - t0))


def outer_phi_surrogate(model, compress=None):
    """Stage one of the two-step baseline.

    Minimizes ``trace(Phi_11)`` over the outer-approximation LMI with the
    normalization ``Phi_22 <= -I_T``; a convex stand-in for the smallest
    outer set.  Returns ``(Phi, alphas)`` or ``None``.
    """
    prob, od = build_outer_phi_lmi(model, LmiProblem("outer-surrogate"), compress)
    Phi = prob["Phi"]
    nd, T = od.n_d, od.T
    prob.psd("phi22_norm", -Phi[nd:, nd:] - np.eye(T))
    prob.minimize(cp.trace(Phi[:nd, :nd]))
    sol = prob.solve()
    if sol.status != "optimal":
        return None, sol
    return (matkit.sym(sol["Phi"], sym_tol=1e-6), np.maximum(sol["alphas"], 0.0)), sol


def synth_structured_twostep(data, model, stage1=None, compress=None):
    """Two-step baseline: surrogate outer QMI, then stabilization with it fixed.

    Stage one depends on the model only, so a precomputed ``(Phi, alphas)``
    pair may be passed as ``stage1`` when many datasets share one model.
    """
    method = "structured-twostep"
    t0 = time.perf_counter()
    if model.n_d != data.n_d or model.T != data.T:
        raise ValueError("structured model does not match the data dimensions")
    sol = None
    if stage1 is None:
        stage1, sol = outer_phi_surrogate(model, compress)
    if stage1 is None:
        if sol.status == "error":
            return _solver_failed(method, sol, t0)
        return _not_certified(method, t0, f"surrogate stage {sol.status}")
    Phi_app, alphas = stage1
    N = n_of_phi(data, Phi_app)
    res = _qstab_core(matkit.sym(N, sym_tol=1e-6), data.n, data.m, method, t0, False,
                      aux={"Phi": Phi_app, "alphas": alphas, "N": N, "stage1": "trace-surrogate"})
    od = outer_phi_data(model)
    res.residuals["outer"] = _rel_min_eig(outer_phi_lmi(Phi_app, alphas, od))
    if res.certified and res.residuals["outer"] < -RESIDUAL_TOL:
        res.status, res.message = NOT_CERTIFIED, "surrogate outer approximation violated on re-check"
    return res
