"""JSON scenario configuration.

A config names a system (preset or inline matrices), a perturbation model,
the data length and seed, and whatever the chosen command needs (method,
gamma, sweep ranges).  Data are either given inline or generated from the
system with the seeded sampler.
"""

import json
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import datagen as dg
from .experiments import METHODS, PRESETS, pendulum_output


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSpec(_Strict):
    preset: str | None = None
    A: list[list[float]] | None = None
    B: list[list[float]] | None = None
    ar_a: list[list[list[float]]] | None = None   # A_1 .. A_L, each p x p
    ar_b: list[list[list[float]]] | None = None   # B_0 .. B_L, each p x m

    @model_validator(mode="after")
    def _one_kind(self):
        kinds = [self.preset is not None, self.A is not None or self.B is not None,
                 self.ar_a is not None or self.ar_b is not None]
        if sum(kinds) != 1:
            raise ValueError("give exactly one of: preset, (A, B), (ar_a, ar_b)")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if kinds[1] and (self.A is None or self.B is None):
            raise ValueError("inline systems need both A and B")
        if kinds[2] and (self.ar_a is None or self.ar_b is None):
            raise ValueError("AR systems need both ar_a and ar_b")
        return self

    def build(self):
        if self.preset is not None:
            return PRESETS[self.preset]
        if self.A is not None:
            return dg.LinearSystem(np.array(self.A, dtype=float), np.array(self.B, dtype=float))
        return dg.ArSystem(tuple(np.array(a, dtype=float) for a in self.ar_a),
                           tuple(np.array(b, dtype=float) for b in self.ar_b))


class PerturbationSpec(_Strict):
    kind: Literal["measurement", "disturbance", "elementwise", "single"] = "measurement"
    eps: float = Field(0.0, ge=0.0)
    E: list[list[float]] | None = None
    theta: list[list[float]] | None = None

    @model_validator(mode="after")
    def _single_fields(self):
        if self.kind == "single" and (self.E is None or self.theta is None):
            raise ValueError("kind 'single' needs E and theta")
        return self


class DataSpec(_Strict):
    x_plus: list[list[float]]
    x: list[list[float]]
    u: list[list[float]]


class OutputSpec(_Strict):
    preset: Literal["pendulum"] | None = None
    C: list[list[float]] | None = None
    D: list[list[float]] | None = None

    def build(self):
        if self.preset == "pendulum":
            return pendulum_output()
        if self.C is None or self.D is None:
            raise ConfigError("performance output needs preset or both C and D")
        return np.array(self.C, dtype=float), np.array(self.D, dtype=float)


class ScenarioConfig(_Strict):
    schema_version: str = "1.0"
    scenario: str = "custom"
    system: SystemSpec | None = None
    perturbation: PerturbationSpec = PerturbationSpec()
    data: DataSpec | None = None
    T: int = Field(20, ge=1)
    eps: float | None = Field(None, ge=0.0)
    seed: int = Field(0, ge=0)
    method: str = "qstab"
    gamma: float | None = Field(None, gt=0.0)
    output: OutputSpec | None = None
    order: int | None = Field(None, ge=1)
    n_samples: int = Field(1000, ge=0)
    eps_grid: list[float] | None = None
    Ts: list[int] | None = None
    repeats: int | None = Field(None, ge=1)
    datasets: int | None = Field(None, ge=1)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _method_fields(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {list(METHODS)}")
        if self.method in ("h2", "hinf") and self.gamma is None:
            raise ValueError(f"method {self.method} needs gamma")
        if self.method in ("h2", "h2opt", "hinf") and self.output is None:
            raise ValueError(f"method {self.method} needs an output section")
        return self

    # -- builders -------------------------------------------------------------
    def build_model(self, n, m, T, nd=None):
        p = self.perturbation
        nd = nd or 2 * n + m
        eps = self.eps if self.eps is not None else p.eps
        if p.kind == "measurement":
            return dg.measurement_noise_model(nd, T, eps)
        if p.kind == "disturbance":
            return dg.disturbance_model(n, m, T, eps)
        if p.kind == "elementwise":
            return dg.elementwise_model(nd, T, eps)
        return dg.single_model(np.array(p.E, dtype=float), np.array(p.theta, dtype=float), T)

    def build_problem(self):
        """``(data, model, sys_cd, true_system)`` for the generic commands."""
        sys_cd = self.output.build() if self.output is not None else None
        if self.data is not None:
            data = dg.DataRecord(np.array(self.data.x_plus, dtype=float), np.array(self.data.x, dtype=float),
                                 np.array(self.data.u, dtype=float),
                                 kind="ar" if self.method == "ar" else "state")
            model = self.build_model(data.n, data.m, data.T, data.n_d)
            return data, model, sys_cd, None
        if self.system is None:
            raise ConfigError("config needs either system or data")
        sys_ = self.system.build()
        rng = dg.make_rng(self.seed, 0)
        if isinstance(sys_, dg.ArSystem):
            clean = dg.random_ar_data(sys_, self.T, rng)
        else:
            clean = dg.random_data(sys_, self.T, rng)
        model = self.build_model(clean.n, clean.m, clean.T, clean.n_d)
        data = dg.perturb(clean, dg.sample_perturbation(model, rng=rng))
        return data, model, sys_cd, sys_


def load_config(path=None, overrides=None):
    """Read and validate a JSON config; ``overrides`` replace top-level keys."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
