"""Clean data, perturbation sets, perturbed data and the consistent system set.

Data are stored as ``(x_plus, x, u)``; for autoregressive models ``x_plus``
holds the outputs ``Y`` and ``x`` the lifted regressor.  The stacked data
matrix is ``[x_plus; -x; -u]`` and a perturbation ``delta`` is added to it,
so ``delta = [dX+; -dX; -dU]``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import matkit
from .qmi import ExplicitParam, QmiSet, contains, explicit_param, is_matrix_ellipsoid, sample_ball


def make_rng(seed, *key):
    """Counter-based generator keyed by ``(seed, *key)``.

    Distinct keys give independent streams, so workers can draw in any order
    and still reproduce a serial run.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# -- systems -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearSystem:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray | None = None
    d: np.ndarray | None = None

    def __post_init__(self):
        a, b = matkit.as_mat(self.a), matkit.as_mat(self.b)
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ValueError(f"inconsistent (A, B) shapes {a.shape}, {b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if (self.c is None) != (self.d is None):
            raise ValueError("C and D must be given together")
        if self.c is not None:
            c, d = matkit.as_mat(self.c), matkit.as_mat(self.d)
            if c.shape[1] != a.shape[0] or d.shape != (c.shape[0], b.shape[1]):
                raise ValueError(f"inconsistent (C, D) shapes {c.shape}, {d.shape}")
            object.__setattr__(self, "c", c)
            object.__setattr__(self, "d", d)

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def m(self):
        return self.b.shape[1]


def ar_shift_matrices(p, m, order):
    """Shift blocks ``J1`` and ``J2`` of the lifted AR state map."""
    nx = (p + m) * order
    rows = nx - p
    J1 = np.zeros((rows, nx))
    J2 = np.zeros((rows, m))
    py = p * (order - 1)
    J1[:py, :py] = np.eye(py)
    J2[py:py + m, :] = np.eye(m)
    mu = m * (order - 1)
    J1[py + m:, p * order:p * order + mu] = np.eye(mu)
    return J1, J2


@dataclass(frozen=True, eq=False)
class ArSystem:
    """``y(t) = sum_l A_l y(t-l) + sum_l B_l u(t-l)``; ``b_coeffs[0]`` is ``B_0``."""

    a_coeffs: tuple
    b_coeffs: tuple

    def __post_init__(self):
        a = tuple(matkit.as_mat(x) for x in self.a_coeffs)
        b = tuple(matkit.as_mat(x) for x in self.b_coeffs)
        if len(a) < 1 or len(b) != len(a) + 1:
            raise ValueError("need L >= 1 output and L + 1 input coefficients")
        p, m = a[0].shape[0], b[0].shape[1]
        if any(x.shape != (p, p) for x in a) or any(x.shape != (p, m) for x in b):
            raise ValueError("coefficient shapes are inconsistent")
        object.__setattr__(self, "a_coeffs", a)
        object.__setattr__(self, "b_coeffs", b)

    @property
    def order(self):
        return len(self.a_coeffs)

    @property
    def p(self):
        return self.a_coeffs[0].shape[0]

    @property
    def m(self):
        return self.b_coeffs[0].shape[1]

    @property
    def nx(self):
        return (self.p + self.m) * self.order

    def params(self):
        """Unknown parameters ``(A, B)`` with ``A = [A_1..A_L B_1..B_L]``, ``B = B_0``."""
        return np.hstack(self.a_coeffs + self.b_coeffs[1:]), self.b_coeffs[0]

    def lifted(self):
        A, B = self.params()
        return lift_ar(A, B, self.p, self.m, self.order)


def lift_ar(A, B, p, m, order):
    """State matrices ``([A; J1], [B; J2])`` of the lifted AR model."""
    J1, J2 = ar_shift_matrices(p, m, order)
    return np.vstack([A, J1]), np.vstack([B, J2])


# -- data --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DataRecord:
    x_plus: np.ndarray
    x: np.ndarray
    u: np.ndarray
    kind: str = "state"  # "state" or "ar"

    def __post_init__(self):
        xp, x, u = (matkit.as_mat(v) for v in (self.x_plus, self.x, self.u))
        T = xp.shape[1]
        if T < 1 or x.shape[1] != T or u.shape[1] != T:
            raise ValueError("data matrices need a common positive column count")
        if self.kind not in ("state", "ar"):
            raise ValueError(f"unknown data kind {self.kind!r}")
        if self.kind == "state" and x.shape[0] != xp.shape[0]:
            raise ValueError("state data: X and X+ must have the same row count")
        object.__setattr__(self, "x_plus", xp)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    @property
    def T(self):
        return self.x_plus.shape[1]

    @property
    def n(self):
        """Row count of the identity block (state or output dimension)."""
        return self.x_plus.shape[0]

    @property
    def nx(self):
        return self.x.shape[0]

    @property
    def m(self):
        return self.u.shape[0]

    @property
    def n_d(self):
        return self.n + self.nx + self.m

    def stacked(self):
        return np.vstack([self.x_plus, -self.x, -self.u])

    @classmethod
    def from_stacked(cls, S, n, nx, kind="state"):
        S = matkit.as_mat(S)
        return cls(S[:n], -S[n:n + nx], -S[n + nx:], kind)

    def first(self, T):
        """Data restricted to the first ``T`` columns."""
        return DataRecord(self.x_plus[:, :T], self.x[:, :T], self.u[:, :T], self.kind)


def simulate(sys, x0, u_seq, seed=None):
    """Clean state trajectory ``x(t+1) = A x(t) + B u(t)``.

    ``seed`` is accepted for interface symmetry; the map is deterministic.
    """
    u_seq = matkit.as_mat(u_seq)
    if u_seq.shape[0] != sys.m:
        raise ValueError(f"input sequence must have {sys.m} rows")
    T = u_seq.shape[1]
    x = np.zeros((sys.n, T + 1))
    x[:, 0] = np.asarray(x0, dtype=float).reshape(-1)
    for t in range(T):
        x[:, t + 1] = sys.a @ x[:, t] + sys.b @ u_seq[:, t]
    return DataRecord(x[:, 1:], x[:, :-1], u_seq)


def random_data(sys, T, rng):
    """Columns of ``X`` and ``U`` i.i.d. standard normal, ``X+ = A X + B U``."""
    X = rng.standard_normal((sys.n, T))
    U = rng.standard_normal((sys.m, T))
    return DataRecord(sys.a @ X + sys.b @ U, X, U)


def simulate_ar(sys, u_seq, y_init=None, u_init=None):
    """Clean AR data ``(Y, X, U)`` from one input sequence.

    ``u_seq`` holds ``u(0..T-1)``; ``y_init`` / ``u_init`` give the ``L`` past
    values (most recent first), zero by default.
    """
    u_seq = matkit.as_mat(u_seq)
    p, m, L = sys.p, sys.m, sys.order
    if u_seq.shape[0] != m:
        raise ValueError(f"input sequence must have {m} rows")
    T = u_seq.shape[1]
    ys = [np.zeros(p)] * L if y_init is None else [np.asarray(v, float).reshape(p) for v in y_init]
    us = [np.zeros(m)] * L if u_init is None else [np.asarray(v, float).reshape(m) for v in u_init]
    A, B = sys.params()
    Y, X = np.zeros((p, T)), np.zeros((sys.nx, T))
    for t in range(T):
        x = np.concatenate(ys[:L] + us[:L])
        y = A @ x + B @ u_seq[:, t]
        X[:, t], Y[:, t] = x, y
        ys = [y] + ys[:L - 1]
        us = [u_seq[:, t]] + us[:L - 1]
    return DataRecord(Y, X, u_seq, kind="ar")


def random_ar_data(sys, T, rng):
    """AR data from a random input sequence and random initial window."""
    u = rng.standard_normal((sys.m, T))
    y0 = rng.standard_normal((sys.order, sys.p))
    u0 = rng.standard_normal((sys.order, sys.m))
    return simulate_ar(sys, u, list(y0), list(u0))


def perturb(data, delta):
    """Measured data: the stacked matrix plus ``delta``."""
    delta = matkit.as_mat(delta)
    S = data.stacked()
    if delta.shape != S.shape:
        raise ValueError(f"delta must be {S.shape}, got {delta.shape}")
    return DataRecord.from_stacked(S + delta, data.n, data.nx, data.kind)


# -- perturbation models -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class SingleModel:
    """``{E D : D^T in Z(phi_hat)}`` with ``phi_hat`` a matrix ellipsoid."""

    e: np.ndarray
    phi_hat: QmiSet

    def __post_init__(self):
        e = matkit.as_mat(self.e)
        if e.shape[1] != self.phi_hat.q:
            raise ValueError("E column count must match the identity block of phi_hat")
        if not is_matrix_ellipsoid(self.phi_hat)[0]:
            raise ValueError("phi_hat is not a matrix ellipsoid")
        object.__setattr__(self, "e", e)

    @property
    def n_d(self):
        return self.e.shape[0]

    @property
    def T(self):
        return self.phi_hat.r


@dataclass(frozen=True, eq=False)
class StructuredTerm:
    e: np.ndarray
    f: np.ndarray
    phi: QmiSet

    def __post_init__(self):
        e, f = matkit.as_mat(self.e), matkit.as_mat(self.f)
        if e.shape[1] != self.phi.q or f.shape[0] != self.phi.r:
            raise ValueError("term matrices do not match the QMI dimensions")
        if not is_matrix_ellipsoid(self.phi)[0]:
            raise ValueError("term QMI is not a matrix ellipsoid")
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "f", f)


@dataclass(frozen=True, eq=False)
class StructuredModel:
    """``{sum_j E_j D_j F_j : D_j^T in Z(phi_j)}``."""

    terms: tuple = field(default_factory=tuple)
    name: str = "structured"

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("structured model needs at least one term")
        nd, T = terms[0].e.shape[0], terms[0].f.shape[1]
        if any(t.e.shape[0] != nd or t.f.shape[1] != T for t in terms):
            raise ValueError("terms do not compose to a common n_d x T shape")
        object.__setattr__(self, "terms", terms)

    @property
    def n_d(self):
        return self.terms[0].e.shape[0]

    @property
    def T(self):
        return self.terms[0].f.shape[1]


def box_qmi(radius_sq, q, r):
    """``diag(radius_sq I_q, -I_r)``: the set ``{Z : Z^T Z <= radius_sq I}``."""
    return QmiSet(matkit.block_diag(radius_sq * np.eye(q), -np.eye(r)), q)


def single_model(e, theta, T):
    """``E`` with ``phi_hat = diag(theta, -I_T)``."""
    theta = matkit.sym(theta)
    return SingleModel(e, QmiSet(matkit.block_diag(theta, -np.eye(T)), theta.shape[0]))


def measurement_noise_model(n_d, T, eps):
    """Every data entry perturbed: ``E = I`` and ``D D^T <= eps^2 T I``."""
    return SingleModel(np.eye(n_d), box_qmi(eps**2 * T, n_d, T))


def disturbance_model(n, m, T, eps):
    """Process disturbance on ``X+`` only: ``E = [I_n 0]^T``."""
    e = np.vstack([np.eye(n), np.zeros((n + m, n))])
    return SingleModel(e, box_qmi(eps**2 * T, n, T))


def disturbance_measurement_model(n, m, T, phi_d, phi_m):
    """Disturbance on ``X+`` plus measurement noise on all data."""
    nd = 2 * n + m
    e_d = np.vstack([np.eye(n), np.zeros((n + m, n))])
    return StructuredModel((StructuredTerm(e_d, np.eye(T), phi_d),
                            StructuredTerm(np.eye(nd), np.eye(T), phi_m)), "disturbance+measurement")


def hankel_model(p, order, T, phi0):
    """Hankel-structured perturbation of ``order`` stacked ``p``-row blocks.

    Each shifted copy gets its own term, so the set is the one spanned by
    independent copies of the base sequence (a superset of the Hankel set).
    """
    terms = []
    for l in range(order):
        e = np.zeros((p * order, p))
        e[p * l:p * (l + 1)] = np.eye(p)
        f = np.zeros((T + order - 1, T))
        f[l:l + T] = np.eye(T)
        terms.append(StructuredTerm(e, f, phi0))
    return StructuredModel(tuple(terms), "hankel")


def instantaneous_model(e, T, phi_t):
    """Per-sample bound ``delta(t)^T in Z(phi_t)`` on ``E [delta(0) .. delta(T-1)]``."""
    terms = []
    for t in range(T):
        f = np.zeros((1, T))
        f[0, t] = 1.0
        terms.append(StructuredTerm(e, f, phi_t))
    return StructuredModel(tuple(terms), "instantaneous")


def elementwise_model(n_d, T, eps):
    """Each entry bounded: ``delta_ij^2 <= eps^2``."""
    phi = QmiSet(np.diag([eps**2, -1.0]), 1)
    terms = []
    for i in range(n_d):
        e = np.zeros((n_d, 1))
        e[i, 0] = 1.0
        for j in range(T):
            f = np.zeros((1, T))
            f[0, j] = 1.0
            terms.append(StructuredTerm(e, f, phi))
    return StructuredModel(tuple(terms), "elementwise")


# -- perturbation sampling ---------------------------------------------------

def _batch_opnorm(M):
    if M.shape[1] == 0 or M.shape[2] == 0:
        return np.zeros(M.shape[0])
    if M.shape[1] == 1 or M.shape[2] == 1:
        return np.sqrt(np.sum(M * M, axis=(1, 2)))
    return np.linalg.svd(M, compute_uv=False)[:, 0]


def metropolis_ball(rng, batch, rows, cols, count=1, burn_in=1000, thin=10, step=None):
    """Random-walk Metropolis targeting the uniform law on ``{||M||_2 <= 1}``.

    Runs ``batch`` independent chains from the centre and returns an array of
    shape ``(count, batch, rows, cols)``.  The default Gaussian step is
    ``0.1 / (sqrt(rows) + sqrt(cols))`` per entry, which keeps the typical
    operator-norm move near a tenth of the radius in any dimension.
    """
    if step is None:
        step = 0.1 / (np.sqrt(rows) + np.sqrt(cols)) if rows * cols else 0.0
    M = np.zeros((batch, rows, cols))
    out = np.zeros((count, batch, rows, cols))
    total = burn_in + thin * (count - 1) + 1
    k = 0
    for it in range(total):
        prop = M + step * rng.standard_normal(M.shape)
        ok = _batch_opnorm(prop) <= 1.0
        M[ok] = prop[ok]
        if it >= burn_in and (it - burn_in) % thin == 0:
            out[k] = M
            k += 1
    return out


def _delta_single(model, M1):
    return model.e @ explicit_param(model.phi_hat, M1)


def _group_terms(model):
    groups = {}
    for idx, t in enumerate(model.terms):
        groups.setdefault((t.phi.q, t.phi.r), []).append(idx)
    return groups


def sample_perturbations(model, count, seed=0, burn_in=1000, thin=10, rng=None, parts=False):
    """``count`` perturbations approximately uniform over the model set.

    The chain lives on the ``M1`` parameter of each ellipsoid (``M2 = 0``),
    terms of equal shape share one vectorized batch.  Every returned sample
    is re-checked for membership.  With ``parts=True`` the per-term blocks
    ``D_j`` are returned as well.
    """
    if rng is None:
        rng = make_rng(seed)
    out, comps = [], []
    if isinstance(model, SingleModel):
        ph = model.phi_hat
        param = ExplicitParam(ph)
        chains = metropolis_ball(rng, 1, ph.q, ph.r, count, burn_in, thin)
        for k in range(count):
            Dh = param(chains[k, 0])
            if not contains(ph, Dh.T):
                raise RuntimeError("sampled perturbation left the ellipsoid")
            out.append(model.e @ Dh)
            comps.append([Dh])
    elif isinstance(model, StructuredModel):
        per_term = [[None] * len(model.terms) for _ in range(count)]
        for (q, r), idxs in sorted(_group_terms(model).items()):
            chains = metropolis_ball(rng, len(idxs), q, r, count, burn_in, thin)
            params = [ExplicitParam(model.terms[j].phi) for j in idxs]
            for k in range(count):
                for b, j in enumerate(idxs):
                    per_term[k][j] = params[b](chains[k, b])
        for k in range(count):
            total = np.zeros((model.n_d, model.T))
            for t, Dj in zip(model.terms, per_term[k]):
                if not contains(t.phi, Dj.T):
                    raise RuntimeError("sampled perturbation block left its ellipsoid")
                total += t.e @ Dj @ t.f
            out.append(total)
            comps.append(per_term[k])
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    return (out, comps) if parts else out


def sample_perturbation(model, seed=0, burn_in=1000, thin=10, rng=None):
    return sample_perturbations(model, 1, seed, burn_in, thin, rng)[0]


# -- consistent system set ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class SigmaSet:
    data: DataRecord
    model: SingleModel

    @property
    def q(self):
        return self.data.n

    @property
    def r(self):
        return self.data.nx + self.data.m

    @cached_property
    def _membership(self):
        # everything in the membership test that does not depend on (A, B)
        ph = self.model.phi_hat
        Xs = self.data.stacked()
        phi22_pinv = matkit.pinv(ph.n22)
        Pr = ph.n22 @ phi22_pinv
        center = -ph.n12 @ phi22_pinv
        return {
            "x_null": Xs @ (np.eye(ph.r) - Pr),
            "e_root": self.model.e @ matkit.psd_sqrt(matkit.schur_complement(ph.n, ph.q)),
            "x_range": (Xs - self.model.e @ center) @ Pr @ matkit.psd_sqrt(-ph.n22),
            "x_norm": np.linalg.norm(Xs, 2),
        }


def consistency_matrix(data, model):
    """``N = [E X] phi_hat [E X]^T`` for a single-QMI model."""
    if model.n_d != data.n_d or model.T != data.T:
        raise ValueError("perturbation model does not match the data dimensions")
    EX = np.hstack([model.e, data.stacked()])
    return matkit.sym(EX @ model.phi_hat.n @ EX.T)


def _split_ab(sigma, A, B):
    A, B = matkit.as_mat(A), matkit.as_mat(B)
    if A.shape != (sigma.q, sigma.data.nx) or B.shape != (sigma.q, sigma.data.m):
        raise ValueError("(A, B) shapes do not match the data")
    return np.hstack([np.eye(sigma.q), A, B])


def sigma_contains(sigma, A, B, tol=1e-8):
    """Decide ``(A, B) in Sigma`` exactly.

    With ``S = [I A B]`` and the projectors ``Pr = phi22 phi22^+`` and
    ``Pn = I - Pr``, membership splits into the range inclusion
    ``im S X Pn in im S E`` and the existence of ``M1`` with ``||M1|| <= 1``
    and ``S E Q M1 = S (X - E Dc) R``; the least-squares ``M1`` has the
    smallest operator norm among all solutions.
    """
    S = _split_ab(sigma, A, B)
    pre = sigma._membership
    SE = S @ sigma.model.e
    scale = max(1.0, np.linalg.norm(S, 2) * pre["x_norm"])

    lhs = S @ pre["x_null"]
    if np.linalg.norm(lhs) > tol * scale:
        coef, *_ = np.linalg.lstsq(SE, lhs, rcond=None)
        if np.linalg.norm(SE @ coef - lhs) > tol * scale:
            return False

    H = S @ pre["e_root"]
    G = S @ pre["x_range"]
    M1, *_ = np.linalg.lstsq(H, G, rcond=None)
    if np.linalg.norm(H @ M1 - G) > tol * scale:
        return False
    return bool(np.linalg.norm(M1, 2) <= 1.0 + tol) if M1.size else True


def sample_sigma(sigma, count, seed=0, rng=None, box=10.0, boundary_frac=0.25, max_tries=None):
    """Systems in ``Sigma``: the centre first, then ellipsoid members.

    Candidates are drawn from ``Z(N)`` through the explicit parametrization,
    with ``M1`` from the unit ball (a fraction on its boundary) and, when
    ``N22`` is singular, ``M2`` uniform in ``[-box, box]``; candidates are kept
    only if :func:`sigma_contains` accepts them.
    """
    if rng is None:
        rng = make_rng(seed)
    N = QmiSet(consistency_matrix(sigma.data, sigma.model), sigma.q)
    if not is_matrix_ellipsoid(N)[0]:
        raise ValueError("consistent set is not a matrix ellipsoid; no sampler available")
    param = ExplicitParam(N)
    q, r, nx = N.q, N.r, sigma.data.nx
    singular = np.linalg.matrix_rank(N.n22, tol=matkit.RANK_TOL * max(1.0, np.abs(N.n22).max())) < r
    out = []
    tries = 0
    max_tries = max_tries or 50 * count + 100
    while len(out) < count and tries < max_tries:
        if tries == 0:
            M1 = np.zeros((q, r))
        else:
            M1 = sample_ball(rng, q, r, boundary=rng.uniform() < boundary_frac)
        M2 = rng.uniform(-box, box, size=(q, r)) if singular and tries else None
        tries += 1
        Z = param(M1, M2).T
        A, B = Z[:nx].T, Z[nx:].T
        if sigma_contains(sigma, A, B, tol=1e-7):
            out.append((A, B))
    if len(out) < count:
        raise RuntimeError(f"only {len(out)} of {count} sampled systems were consistent")
    return out


def sample_qmi_systems(n_mat, q, nx, count, seed=0, rng=None, box=10.0, boundary_frac=0.25):
    """Systems ``(A, B)`` with ``[A B]^T`` in ``Z(n_mat)``, centre first.

    Used for outer sets ``Z(N(Phi))`` that are not tied to a single-QMI
    perturbation model; members come straight from the explicit
    parametrization and are re-checked with :func:`qmi.contains`.
    """
    if rng is None:
        rng = make_rng(seed)
    N = QmiSet(n_mat, q)
    if not is_matrix_ellipsoid(N)[0]:
        raise ValueError("outer set is not a matrix ellipsoid; no sampler available")
    param = ExplicitParam(N)
    r = N.r
    singular = np.linalg.matrix_rank(N.n22, tol=matkit.RANK_TOL * max(1.0, np.abs(N.n22).max())) < r
    out = []
    for k in range(count):
        M1 = np.zeros((q, r)) if k == 0 else sample_ball(rng, q, r, boundary=rng.uniform() < boundary_frac)
        M2 = rng.uniform(-box, box, size=(q, r)) if singular and k else None
        Z = param(M1, M2).T
        if not contains(N, Z, tol=1e-7):
            raise RuntimeError("sampled system left the outer set")
        out.append((Z[:nx].T, Z[nx:].T))
    return out
