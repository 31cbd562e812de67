"""``qmi-info`` command line.

Exit codes: 0 certified / all checks passed, 2 not certified or a check
failed, 3 solver error, 4 configuration error.
"""

import csv
import json
import logging
from pathlib import Path
import sys

import click
import numpy as np

from . import experiments as ex
from .config import ConfigError, load_config
from .datagen import DataRecord
from .informativity import CERTIFIED, SOLVER_ERROR, SynthesisResult

EXIT_OK, EXIT_NOT_CERTIFIED, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4

log = logging.getLogger("qmi_info")


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)


def _emit(payload, out, name):
    text = _dump(payload)
    if out is None:
        click.echo(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(text + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={ex.SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _status_code(status):
    if status == CERTIFIED:
        return EXIT_OK
    if status == SOLVER_ERROR:
        return EXIT_SOLVER
    return EXIT_NOT_CERTIFIED


def _config_or_exit(path, **overrides):
    try:
        return load_config(path, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _common(fn):
    fn = click.option("--timing", is_flag=True, help="Include wall-clock times in JSON.")(fn)
    fn = click.option("--workers", type=click.IntRange(min=1), default=None, help="Worker processes.")(fn)
    fn = click.option("--repeat", type=click.IntRange(min=1), default=None,
                      help="Repeats per sweep point (C) or datasets per eps (D).")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
                      help="Directory for JSON and CSV artifacts (stdout JSON when omitted).")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), default=None, help="Base random seed.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="JSON scenario config.")(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Data informativity under data perturbation: synthesis, verification, experiments."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _run_experiment(result, out, timing):
    payload = result.to_dict(timing)
    _emit(payload, out, f"experiment_{result.name.lower()}")
    if out is not None:
        for name, (header, rows) in result.tables.items():
            write_csv(out / f"experiment_{result.name.lower()}_{name}.csv", header, rows)
    if any(r is not None and r.status == SOLVER_ERROR for _, r, _ in result.results) and not result.passed:
        sys.exit(EXIT_SOLVER)
    sys.exit(EXIT_OK if result.passed else EXIT_NOT_CERTIFIED)


@main.command("experiment-a")
@_common
def experiment_a(config_path, seed, out, repeat, workers, timing):
    """Scalar system under measurement noise; Sigma boundary and stabilizing band."""
    cfg = _config_or_exit(config_path, seed=seed)
    eps = cfg.eps if cfg.eps is not None else 0.3
    _run_experiment(ex.experiment_a(eps=eps, T=cfg.T, seed=cfg.seed, n_samples=cfg.n_samples), out, timing)


@main.command("experiment-b")
@_common
def experiment_b(config_path, seed, out, repeat, workers, timing):
    """Rank-deficient data with a zero input channel."""
    cfg = _config_or_exit(config_path, seed=seed)
    s = cfg.seed if (seed is not None or config_path) else 100
    T = cfg.T if config_path else 4
    _run_experiment(ex.experiment_b(seed=s, T=T, n_samples=cfg.n_samples), out, timing)


@main.command("experiment-c")
@_common
def experiment_c(config_path, seed, out, repeat, workers, timing):
    """H2 bound against data length for the pendulum."""
    cfg = _config_or_exit(config_path, seed=seed, repeats=repeat, workers=workers)
    eps = cfg.eps if cfg.eps is not None else 1e-3
    Ts = tuple(cfg.Ts or (4, 10, 50, 200, 1000))
    _run_experiment(ex.experiment_c(eps=eps, Ts=Ts, repeats=cfg.repeats or 10, seed=cfg.seed,
                                    n_samples=cfg.n_samples, workers=cfg.workers), out, timing)


@main.command("experiment-d")
@_common
def experiment_d(config_path, seed, out, repeat, workers, timing):
    """Feasibility rates of co-design and the two-step surrogate baseline."""
    cfg = _config_or_exit(config_path, seed=seed, datasets=repeat, workers=workers)
    _run_experiment(ex.experiment_d(eps_grid=cfg.eps_grid, T=cfg.T, datasets=cfg.datasets or 20,
                                    seed=cfg.seed, n_samples=cfg.n_samples, workers=cfg.workers),
                    out, timing)


@main.command("experiment-d1")
@_common
def experiment_d1(config_path, seed, out, repeat, workers, timing):
    """Scalar system under element-wise noise: co-design versus two-step."""
    cfg = _config_or_exit(config_path, seed=seed)
    eps = cfg.eps if cfg.eps is not None else 0.15
    _run_experiment(ex.experiment_d1(eps=eps, T=cfg.T, seed=cfg.seed, n_samples=cfg.n_samples), out, timing)


def _synth_from_config(cfg):
    data, model, sys_cd, sys_ = cfg.build_problem()
    order = cfg.order
    if cfg.method == "ar" and order is None:
        order = data.nx // (data.n + data.m)
    res = ex.synthesize(cfg.method, data, model, sys_cd, cfg.gamma, order)
    return data, model, sys_cd, res


def _data_dict(data):
    return {"x_plus": data.x_plus.tolist(), "x": data.x.tolist(), "u": data.u.tolist(), "kind": data.kind}


@main.command("synth")
@_common
def synth(config_path, seed, out, repeat, workers, timing):
    """Run one synthesis method from a config; prints the result JSON."""
    if config_path is None:
        click.echo("config error: synth needs --config", err=True)
        sys.exit(EXIT_CONFIG)
    cfg = _config_or_exit(config_path, seed=seed)
    try:
        data, model, sys_cd, res = _synth_from_config(cfg)
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    payload = {"schema_version": ex.SCHEMA_VERSION, "config": cfg.model_dump(mode="json"),
               "data": _data_dict(data), "result": res.to_dict(timing)}
    _emit(payload, out, "synth")
    sys.exit(_status_code(res.status))


def _result_from_dict(d):
    r = d["result"]
    cert = r["certificates"]
    arr = (lambda v: None if v is None else np.array(v, dtype=float))
    return SynthesisResult(r["status"], r["method"], arr(r["K"]), arr(cert["P_or_Y"]), arr(cert["L"]),
                           cert["alpha"], cert["beta"], r["gamma"], r["exact"],
                           aux={k: (np.array(v) if isinstance(v, list) else v) for k, v in r["aux"].items()},
                           residuals=r["residuals"], message=r["message"])


@main.command("verify")
@_common
@click.option("--result", "result_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSON written by `qmi-info synth`.")
@click.option("--samples", type=click.IntRange(min=1), default=None, help="Sampled systems.")
def verify(config_path, seed, out, repeat, workers, timing, result_path, samples):
    """Sampled closed-loop check of a synthesis result."""
    try:
        saved = json.loads(Path(result_path).read_text())
        res = _result_from_dict(saved)
        cfg = load_config(None, {**saved["config"], **({"seed": seed} if seed is not None else {})})
        d = saved["data"]
        data = DataRecord(np.array(d["x_plus"]), np.array(d["x"]), np.array(d["u"]), kind=d["kind"])
        model = cfg.build_model(data.n, data.m, data.T, data.n_d)
        sys_cd = cfg.output.build() if cfg.output is not None else None
    except (OSError, KeyError, TypeError, json.JSONDecodeError, ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if not res.certified:
        _emit({"schema_version": ex.SCHEMA_VERSION, "status": res.status,
               "verification": None}, out, "verify")
        sys.exit(_status_code(res.status))
    n = samples or cfg.n_samples
    report = ex.verify_result(res.method, res, data, model, sys_cd, n_samples=n, seed=cfg.seed)
    payload = {"schema_version": ex.SCHEMA_VERSION, "status": res.status, "verification": report.to_dict()}
    _emit(payload, out, "verify")
    if out is not None:
        rows = [[i, r["margin"], int(r["ok"])] for i, r in enumerate(report.detail)]
        write_csv(out / "verify_margins.csv", ["sample", "margin", "ok"], rows)
    sys.exit(EXIT_OK if report.passed else EXIT_NOT_CERTIFIED)


if __name__ == "__main__":
    main()
