"""Small named-variable LMI container lowered to cvxpy.

Only what the synthesis problems need: symmetric / rectangular / scalar
decision blocks, affine PSD constraints, linear equalities and scalar bounds,
and a single linear objective.  Clarabel is the default backend; SCS is tried
when Clarabel raises.
"""

from dataclasses import dataclass, field
import logging
import time
import warnings

import cvxpy as cp
import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SOLVERS = ("CLARABEL", "SCS")

_CLARABEL_OPTS = {
    "tol_gap_abs": 1e-10,
    "tol_gap_rel": 1e-10,
    "tol_feas": 1e-10,
    "max_iter": 500,
}
_SCS_OPTS = {"eps_abs": 1e-9, "eps_rel": 1e-9, "max_iters": 200000}


class SolverFailure(RuntimeError):
    """The backend crashed or returned no usable status."""


@dataclass
class LmiSolution:
    status: str  # "optimal" | "infeasible" | "unbounded" | "error"
    values: dict = field(default_factory=dict)
    objective: float | None = None
    solver: str = ""
    inaccurate: bool = False
    message: str = ""
    wall_time_ms: float = 0.0

    @property
    def ok(self):
        return self.status == "optimal"

    def __getitem__(self, name):
        return self.values[name]


def symmetrize(expr):
    return 0.5 * (expr + expr.T)


class LmiProblem:
    """Named decision variables plus affine constraints."""

    def __init__(self, name=""):
        self.name = name
        self.variables = {}
        self.constraints = []
        self._psd = {}
        self._objective = None
        self._sense = None

    # -- variables ---------------------------------------------------------
    def _add_var(self, name, var):
        if name in self.variables:
            raise ValueError(f"variable {name!r} already declared")
        self.variables[name] = var
        return var

    def symmetric(self, name, n):
        return self._add_var(name, cp.Variable((n, n), symmetric=True, name=name))

    def matrix(self, name, rows, cols):
        return self._add_var(name, cp.Variable((rows, cols), name=name))

    def scalar(self, name, nonneg=False):
        return self._add_var(name, cp.Variable(nonneg=nonneg, name=name))

    def vector(self, name, size, nonneg=False):
        return self._add_var(name, cp.Variable(size, nonneg=nonneg, name=name))

    def __getitem__(self, name):
        return self.variables[name]

    # -- constraints -------------------------------------------------------
    def psd(self, name, expr, margin=0.0):
        """Require ``expr - margin*I`` to be positive semidefinite."""
        expr = symmetrize(expr)
        n = expr.shape[0]
        lhs = expr - margin * np.eye(n) if margin else expr
        self._psd[name] = expr
        self.constraints.append((name, lhs >> 0))

    def rotated_cone(self, name, x, y, z):
        """Elementwise ``x_i y_i >= z_i^2`` with ``x, y >= 0`` (vectors of equal length)."""
        self.constraints.append((name, cp.SOC(x + y, cp.vstack([2 * z, x - y]), axis=0)))

    def equal(self, name, lhs, rhs):
        self.constraints.append((name, lhs == rhs))

    def at_least(self, name, expr, bound):
        self.constraints.append((name, expr >= bound))

    def at_most(self, name, expr, bound):
        self.constraints.append((name, expr <= bound))

    def maximize(self, expr):
        self._objective, self._sense = expr, "max"

    def minimize(self, expr):
        self._objective, self._sense = expr, "min"

    @property
    def psd_blocks(self):
        return dict(self._psd)

    # -- solving -----------------------------------------------------------
    def to_cvxpy(self):
        if self._objective is None:
            objective = cp.Minimize(0)
        elif self._sense == "max":
            objective = cp.Maximize(self._objective)
        else:
            objective = cp.Minimize(self._objective)
        return cp.Problem(objective, [c for _, c in self.constraints])

    def solve(self, solvers=DEFAULT_SOLVERS):
        prob = self.to_cvxpy()
        errors = []
        for solver in solvers:
            opts = _CLARABEL_OPTS if solver == "CLARABEL" else _SCS_OPTS if solver == "SCS" else {}
            t0 = time.perf_counter()
            try:
                with warnings.catch_warnings():
                    # inaccurate solutions are flagged on the result instead
                    warnings.simplefilter("ignore", UserWarning)
                    prob.solve(solver=solver, **opts)
            except (cp.error.SolverError, ArithmeticError, ValueError) as exc:
                errors.append(f"{solver}: {exc}")
                log.debug("solver %s failed on %s: %s", solver, self.name, exc)
                continue
            elapsed = 1e3 * (time.perf_counter() - t0)
            status = prob.status or ""
            if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
                values = {}
                for name, var in self.variables.items():
                    v = var.value
                    values[name] = float(v) if var.ndim == 0 else np.array(v, dtype=float)
                obj = prob.value
                return LmiSolution("optimal", values, None if obj is None else float(obj), solver,
                                   status == cp.OPTIMAL_INACCURATE, status, elapsed)
            if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
                return LmiSolution("infeasible", solver=solver, message=status,
                                   inaccurate=status == cp.INFEASIBLE_INACCURATE, wall_time_ms=elapsed)
            if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
                return LmiSolution("unbounded", solver=solver, message=status, wall_time_ms=elapsed)
            errors.append(f"{solver}: status {status!r}")
        return LmiSolution("error", solver=",".join(solvers), message="; ".join(errors))
