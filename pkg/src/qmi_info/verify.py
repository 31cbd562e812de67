"""Independent checks of synthesized controllers.

Nothing here calls the LMI layer.  Closed loops are sampled from the
consistent set and checked with eigenvalues, Lyapunov equations and
Hamiltonian tests; QMI inclusions are checked by scanning the ellipsoid.
"""

from dataclasses import dataclass, field
import json

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from . import matkit
from .datagen import lift_ar, make_rng, sample_sigma
from .qmi import QmiSet, is_matrix_ellipsoid, member, sample_ball

RADIUS_MARGIN = 1e-10
HINF_TOL = 1e-6


@dataclass
class VerificationReport:
    kind: str
    n_samples: int
    violations: int
    worst_margin: float
    detail: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 <= self.violations <= self.n_samples:
            raise ValueError("violations must lie in [0, n_samples]")

    @property
    def passed(self):
        return self.violations == 0

    @property
    def summary(self):
        if self.passed:
            return f"no counterexample in {self.n_samples} samples"
        return f"{self.violations} of {self.n_samples} samples violate the {self.kind} check"

    def to_dict(self, detail=False):
        out = {"kind": self.kind, "n_samples": self.n_samples, "violations": self.violations,
               "worst_margin": self.worst_margin, "summary": self.summary}
        if detail:
            out["detail"] = self.detail
        return out

    def to_json(self, detail=False):
        return json.dumps(self.to_dict(detail), sort_keys=True)


def _report(kind, records):
    margins = [r["margin"] for r in records]
    worst = float(min(margins)) if margins else float("inf")
    bad = sum(not r["ok"] for r in records)
    return VerificationReport(kind, len(records), bad, worst, records)


# -- closed loops -------------------------------------------------------------

def closed_loop(A, B, K, sigma=None):
    """``A + B K``, lifted first when ``sigma`` holds AR data."""
    A, B, K = matkit.as_mat(A), matkit.as_mat(B), matkit.as_mat(K)
    if sigma is not None and sigma.data.kind == "ar":
        p, m = sigma.data.n, sigma.data.m
        order = sigma.data.nx // (p + m)
        A, B = lift_ar(A, B, p, m, order)
    return A + B @ K


def verify_stabilization(sigma, K, n_samples=1000, seed=0, P=None, systems=None):
    """Spectral radius of ``A + B K`` over systems drawn from ``Sigma``.

    A sample passes when its radius is below ``1 - 1e-10``; when ``P`` is
    given it must also satisfy ``P - A_K P A_K^T > 0``.
    """
    if systems is None:
        systems = sample_sigma(sigma, n_samples, seed=seed)
    K = matkit.as_mat(K)
    records = []
    for A, B in systems:
        Ak = closed_loop(A, B, K, sigma)
        rho = matkit.spectral_radius(Ak)
        rec = {"radius": rho, "margin": 1.0 - rho, "ok": bool(rho < 1.0 - RADIUS_MARGIN)}
        if P is not None:
            lyap = matkit.min_eig(matkit.sym(P - Ak @ P @ Ak.T, sym_tol=1e-6))
            rec["lyapunov"] = lyap
            rec["ok"] = rec["ok"] and lyap > 0
        records.append(rec)
    return _report("stabilization", records)


# -- norms --------------------------------------------------------------------

def h2_norm(Ak, Ck):
    """H2 norm of ``Ck (zI - Ak)^{-1}`` from the controllability Gramian."""
    Ak, Ck = matkit.as_mat(Ak), matkit.as_mat(Ck)
    if matkit.spectral_radius(Ak) >= 1.0:
        return np.inf
    W = sla.solve_discrete_lyapunov(Ak, np.eye(Ak.shape[0]))
    return float(np.sqrt(max(np.trace(Ck @ W @ Ck.T), 0.0)))


def h2_norm_impulse(Ak, Ck, rtol=1e-14, max_steps=1_000_000):
    """H2 norm as the energy of the impulse response ``Ck Ak^k``."""
    Ak, Ck = matkit.as_mat(Ak), matkit.as_mat(Ck)
    if matkit.spectral_radius(Ak) >= 1.0:
        return np.inf
    total = 0.0
    G = Ck.copy()
    for _ in range(max_steps):
        term = float(np.sum(G * G))
        total += term
        if term <= rtol * max(total, np.finfo(float).tiny):
            break
        G = G @ Ak
    return float(np.sqrt(total))


def _ct_hamiltonian_has_axis_eig(Ac, Bc, Cc, Dc, gamma):
    R = gamma**2 * np.eye(Dc.shape[1]) - Dc.T @ Dc
    Ri = np.linalg.inv(R)
    F = Ac + Bc @ Ri @ Dc.T @ Cc
    H = np.block([[F, Bc @ Ri @ Bc.T],
                  [-Cc.T @ (np.eye(Cc.shape[0]) + Dc @ Ri @ Dc.T) @ Cc, -F.T]])
    w = np.linalg.eigvals(H)
    return bool(np.any(np.abs(w.real) < 1e-9 * max(1.0, np.abs(w).max())))


def _peak_gain_grid(Ak, Ck, points=256):
    n = Ak.shape[0]
    best = 0.0
    for th in np.linspace(0.0, np.pi, points):
        G = Ck @ np.linalg.solve(np.exp(1j * th) * np.eye(n) - Ak, np.eye(n))
        best = max(best, np.linalg.norm(G, 2))
    return best


def hinf_norm(Ak, Ck, tol=HINF_TOL):
    """H-infinity norm of ``Ck (zI - Ak)^{-1}`` by bisection on gamma.

    The closed loop is mapped to continuous time by the bilinear transform;
    ``gamma`` exceeds the norm iff the associated Hamiltonian has no
    imaginary-axis eigenvalue.
    """
    Ak, Ck = matkit.as_mat(Ak), matkit.as_mat(Ck)
    n = Ak.shape[0]
    if matkit.spectral_radius(Ak) >= 1.0:
        return np.inf
    if not np.any(Ck):
        return 0.0
    Bd = np.eye(n)
    Ip = np.linalg.inv(Ak + np.eye(n))
    Ac = (Ak - np.eye(n)) @ Ip
    Bc = np.sqrt(2.0) * Ip @ Bd
    Cc = np.sqrt(2.0) * Ck @ Ip
    Dc = -Ck @ Ip @ Bd
    lo = max(_peak_gain_grid(Ak, Ck), np.linalg.norm(Dc, 2))
    hi = max(2.0 * lo, 1e-12)
    while _ct_hamiltonian_has_axis_eig(Ac, Bc, Cc, Dc, hi):
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mid <= np.linalg.norm(Dc, 2) or _ct_hamiltonian_has_axis_eig(Ac, Bc, Cc, Dc, mid):
            lo = mid
        else:
            hi = mid
    return float(hi)


def verify_performance(sigma, K, sys_cd, gamma, kind="h2", n_samples=1000, seed=0, systems=None):
    """Closed-loop H2 or H-infinity norm below ``gamma`` on sampled systems."""
    if kind not in ("h2", "hinf"):
        raise ValueError("kind must be 'h2' or 'hinf'")
    C, D = (matkit.as_mat(x) for x in sys_cd)
    K = matkit.as_mat(K)
    if systems is None:
        systems = sample_sigma(sigma, n_samples, seed=seed)
    norm = h2_norm if kind == "h2" else hinf_norm
    Ck = C + D @ K
    records = []
    for A, B in systems:
        Ak = closed_loop(A, B, K, sigma)
        val = norm(Ak, Ck)
        records.append({"norm": val, "margin": gamma - val, "ok": bool(val < gamma)})
    return _report(kind, records)


# -- QMI inclusion --------------------------------------------------------------

@dataclass
class InclusionScan:
    included: bool
    worst_margin: float
    n_points: int
    boxed: bool


def _qmi_margin(M, q, Z):
    S = np.vstack([np.eye(q), Z])
    return matkit.min_eig(matkit.sym(S.T @ M @ S, sym_tol=1e-6))


def inclusion_scan(N, M, q, grid=256, box=None, seed=0):
    """Scan ``Z(N)`` and report the smallest eigenvalue of the ``M`` form.

    For a bounded matrix ellipsoid with ``M22 <= 0`` the ``M`` form is
    concave in ``Z``, so its minimum sits on the extreme points ``M1`` with
    unit singular values; with ``q = 1`` these are two points (``r = 1``) or
    a curve that is gridded and refined (``r = 2``).  Other shapes fall back
    to random boundary and interior points.  Unbounded or non-ellipsoid sets
    are restricted to ``|Z_ij| <= box`` and flagged.
    """
    N, M = matkit.sym(N), matkit.sym(M)
    qs = QmiSet(N, q)
    r = qs.r
    rng = make_rng(seed, 31)
    ok, form = is_matrix_ellipsoid(qs)
    bounded = ok and np.linalg.matrix_rank(qs.n22, tol=1e-9 * max(1.0, np.abs(qs.n22).max())) == r
    if bounded:
        def margin(M1):
            return _qmi_margin(M, q, member(qs, M1))
        vals = []
        if q == 1 and r == 1:
            vals = [margin(np.array([[s]])) for s in (-1.0, 1.0)]
        elif q == 1 and r == 2:
            def f(th):
                return margin(np.array([[np.cos(th), np.sin(th)]]))
            ths = np.linspace(0.0, 2 * np.pi, grid, endpoint=False)
            vals = [f(t) for t in ths]
            h = ths[1] - ths[0]
            for i in np.argsort(vals)[:3]:
                res = minimize_scalar(f, bounds=(ths[i] - h, ths[i] + h), method="bounded",
                                      options={"xatol": 1e-12})
                vals.append(float(res.fun))
        else:
            vals = [margin(sample_ball(rng, q, r, boundary=True)) for _ in range(grid)]
            vals += [margin(sample_ball(rng, q, r)) for _ in range(grid)]
        vals.append(margin(np.zeros((q, r))))
        worst = float(min(vals))
        return InclusionScan(worst > 0, worst, len(vals), False)

    box = 10.0 if box is None else float(box)
    worst, count = np.inf, 0
    axes = np.linspace(-box, box, grid)
    if r * q == 1:
        cands = (np.array([[z]]) for z in axes)
    else:
        cands = (rng.uniform(-box, box, size=(r, q)) for _ in range(grid * grid))
    for Z in cands:
        S = np.vstack([np.eye(q), Z])
        if matkit.min_eig(matkit.sym(S.T @ N @ S, sym_tol=1e-6)) < 0:
            continue
        count += 1
        worst = min(worst, _qmi_margin(M, q, Z))
    return InclusionScan(bool(worst > 0), float(worst), count, True)


def brute_inclusion(N, M, q, grid=256, box=None, seed=0):
    """True iff every scanned point of ``Z(N)`` lies strictly inside ``Z(M)``."""
    return inclusion_scan(N, M, q, grid, box, seed).included
