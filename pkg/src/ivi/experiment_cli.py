"""End-to-end experiment driver and the ``ivi`` command line.

A run reads one JSON config, builds the forward problem and prior, generates
data on a finer mesh, computes the exact posterior and then runs every
requested method (cSGD, pcSGD, pCN). Everything that is compared across runs
is written as CSV; plots are SVG files drawn from the same arrays.

Exit codes: 0 on success, 2 on validation errors, 3 on numeric failures.
The default output root is read from ``IVI_OUTPUT_ROOT``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import json
import os
import platform
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, svgplot
from .diagnostics import (
    TABLE_OFFSETS,
    CovarianceField,
    covariance_error_table,
    covariance_matrix_repr,
    credibility_band,
    relative_l2_error,
)
from .errors import NumericError, ValidationError
from .pcn_sampler import PcnConfig, run_pcn
from .pde_forward import (
    EllipticProblem,
    LinearForwardProblem,
    SolveCounter,
    build_mesh,
    darcy_truth,
    elliptic_truth,
    generate_data,
    linearize_darcy,
)
from .posterior_oracle import exact_posterior, hessian_mode_coefficients
from .prior_spectral import build_prior, prior_spectrum
from .sgd_vi import ChainConfig, pde_solves_per_step, run_chain

__all__ = [
    "ENV_OUTPUT_ROOT",
    "ExperimentConfig",
    "MethodSettings",
    "CostReport",
    "load_config",
    "default_config",
    "forecast_solves",
    "run_experiment",
    "compare_report",
    "main",
]

ENV_OUTPUT_ROOT = "IVI_OUTPUT_ROOT"
PROBLEMS = ("elliptic1d", "darcy2d")
METHODS = ("csgd", "pcsgd", "pcn")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

# keys accepted in each method block; values are the defaults
_SGD_KEYS = {"K", "J", "tol", "S0", "p", "p_safety", "q_floor", "q_refresh", "n_ite", "adaptation", "gradient", "sample_mode"}
_PCN_KEYS = {"beta", "n_samples", "thin", "burn_in", "target_acceptance"}
_DEFAULT_METHODS = {
    "csgd": {"K": 100, "J": 20},
    "pcsgd": {"K": 15, "J": 20, "n_ite": 10},
    "pcn": {"beta": 0.1, "n_samples": 40_000, "thin": 10},
}
_PROBLEM_DEFAULTS = {
    "elliptic1d": {"mesh_n": 100, "fine_n": 10_000, "alpha_pde": 0.05},
    "darcy2d": {"mesh_n": 50, "fine_n": 500, "alpha_pde": None},
}


@dataclass
class MethodSettings:
    name: str
    options: dict = field(default_factory=dict)

    def chain_config(self) -> ChainConfig:
        return ChainConfig(**self.options)

    def pcn_config(self, seed: int) -> PcnConfig:
        return PcnConfig(seed=seed, **self.options)


@dataclass
class ExperimentConfig:
    problem: str = "elliptic1d"
    mesh_n: int = 100
    fine_n: int = 10_000
    noise_pct: float = 0.05
    alpha_pde: float | None = 0.05
    alpha_prior: float = 0.05
    C_M: float = 1e-3
    darcy_source: float = 1.0
    data_seed: int = 0
    methods: list[MethodSettings] = field(default_factory=list)
    seed: int = 0
    output_dir: str | None = None

    def method(self, name: str) -> MethodSettings | None:
        return next((m for m in self.methods if m.name == name), None)

    @property
    def method_names(self) -> list[str]:
        return [m.name for m in self.methods]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = {m.name: dict(m.options) for m in self.methods}
        return d

    def problem_dict(self) -> dict:
        """Fields that define the inverse problem (data included), not the methods."""
        keys = ("problem", "mesh_n", "fine_n", "noise_pct", "alpha_pde", "alpha_prior", "C_M", "darcy_source", "data_seed")
        return {k: getattr(self, k) for k in keys}

    def config_hash(self) -> str:
        return _hash(self.to_dict() | {"output_dir": None})

    def problem_hash(self) -> str:
        return _hash(self.problem_dict())


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ValidationError(f"{path}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _parse_methods(raw) -> list[MethodSettings]:
    if isinstance(raw, list):
        raw = {name: {} for name in raw}
    _require(isinstance(raw, dict) and len(raw) > 0, "methods", "must be a nonempty list or object")
    out = []
    for name, opts in raw.items():
        _require(name in METHODS, f"methods.{name}", f"unknown method; choose from {list(METHODS)}")
        opts = {} if opts is None else opts
        _require(isinstance(opts, dict), f"methods.{name}", "settings must be an object")
        allowed = _PCN_KEYS if name == "pcn" else _SGD_KEYS
        for key in opts:
            _require(key in allowed, f"methods.{name}.{key}", f"unknown setting; allowed {sorted(allowed)}")
        merged = dict(_DEFAULT_METHODS[name]) | dict(opts)
        settings = MethodSettings(name, merged)
        try:
            if name == "pcn":
                settings.pcn_config(0).validate()
            else:
                settings.chain_config().validate()
        except ValidationError as exc:
            raise ValidationError(f"methods.{name}: {exc}") from None
        except TypeError as exc:
            raise ValidationError(f"methods.{name}: {exc}") from None
        out.append(settings)
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a config mapping; errors name the offending field path."""
    _require(isinstance(raw, dict), "<root>", "config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        _require(key in known, key, "unknown field")
    problem = raw.get("problem", "elliptic1d")
    _require(problem in PROBLEMS, "problem", f"must be one of {list(PROBLEMS)}")
    base = dict(_PROBLEM_DEFAULTS[problem])
    vals = {k: v for k, v in raw.items() if k != "methods"}
    vals = base | vals
    cfg = ExperimentConfig(methods=_parse_methods(raw.get("methods", list(METHODS))), **vals)

    _require(_is_int(cfg.mesh_n) and cfg.mesh_n >= 2, "mesh_n", "must be an integer >= 2")
    _require(_is_int(cfg.fine_n), "fine_n", "must be an integer")
    _require(cfg.fine_n > cfg.mesh_n, "fine_n", f"must exceed mesh_n ({cfg.mesh_n}) to avoid an inverse crime")
    _require(_is_num(cfg.noise_pct) and cfg.noise_pct > 0, "noise_pct", "must be positive")
    _require(_is_num(cfg.alpha_prior) and cfg.alpha_prior > 0, "alpha_prior", "must be positive")
    _require(_is_num(cfg.C_M) and 0 < cfg.C_M <= 1, "C_M", "must lie in (0, 1]")
    _require(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "must be a nonnegative integer")
    _require(_is_int(cfg.data_seed) and cfg.data_seed >= 0, "data_seed", "must be a nonnegative integer")
    if problem == "elliptic1d":
        _require(_is_num(cfg.alpha_pde) and cfg.alpha_pde > 0, "alpha_pde", "must be positive")
    else:
        _require(cfg.alpha_pde is None, "alpha_pde", "does not apply to darcy2d")
        _require(_is_num(cfg.darcy_source) and cfg.darcy_source != 0, "darcy_source", "must be a nonzero number")
    _require(cfg.output_dir is None or isinstance(cfg.output_dir, str), "output_dir", "must be a string")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def default_config(problem: str = "elliptic1d") -> ExperimentConfig:
    methods = ["csgd", "pcsgd", "pcn"] if problem == "elliptic1d" else ["csgd", "pcsgd"]
    return config_from_dict({"problem": problem, "methods": methods})


def method_seeds(seed: int) -> dict[str, int]:
    """Independent integer seeds for each method, fixed by ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(METHODS))
    return {name: int(ch.generate_state(1)[0]) for name, ch in zip(METHODS, children)}


def forecast_solves(cfg: ExperimentConfig) -> dict[str, int]:
    """PDE solves each method will perform, from the analytical accounting."""
    out = {}
    for m in cfg.methods:
        if m.name == "pcn":
            out[m.name] = m.pcn_config(0).total_proposals
        else:
            c = m.chain_config()
            out[m.name] = pde_solves_per_step(m.name, c.n_ite) * c.K * c.J
    return out


@dataclass
class CostReport:
    solves: dict[str, int]
    forecast: dict[str, int]
    wall_time: dict[str, float]
    per_step_time: dict[str, float]
    setup_solves: int

    def to_csv(self, path) -> None:
        # wall times are not reproducible, so they live in the manifest only
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "pde_solves", "forecast"])
            w.writerow(["setup", self.setup_solves, self.setup_solves])
            for name in self.solves:
                w.writerow([name, self.solves[name], self.forecast[name]])


@dataclass
class Problem:
    """Everything shared by the methods of one experiment."""

    config: ExperimentConfig
    mesh: object
    pde: object
    forward: LinearForwardProblem
    spectrum: object
    params: object
    posterior: object
    truth: np.ndarray
    truth_coeffs: np.ndarray
    setup_solves: int


def build_problem(cfg: ExperimentConfig) -> Problem:
    if cfg.problem == "elliptic1d":
        mesh = build_mesh(1, cfg.mesh_n)
        pde = EllipticProblem(mesh, cfg.alpha_pde)
        H = pde.forward_matrix()
        truth_fn = elliptic_truth
    else:
        mesh = build_mesh(2, cfg.mesh_n)
        lin = linearize_darcy(mesh, f=np.full(mesh.num_nodes, float(cfg.darcy_source)))
        pde, H = lin.problem, lin.H_lin
        truth_fn = darcy_truth
    data = generate_data(truth_fn, cfg.fine_n, pde, cfg.noise_pct, np.random.default_rng(cfg.data_seed))
    spectrum = prior_spectrum(build_prior(mesh, cfg.alpha_prior), cfg.C_M)
    posterior = exact_posterior(spectrum, H, data.noise_variance, data.data)
    params = hessian_mode_coefficients(H, data.noise_variance, spectrum)
    forward = LinearForwardProblem(H, pde.points, data.noise_variance, data.data, pde=pde)
    truth = truth_fn(mesh.nodes)
    return Problem(cfg, mesh, pde, forward, spectrum, params, posterior, truth, spectrum.coefficients(truth), pde.counter.count)


def _forward_with_own_counter(problem: Problem) -> LinearForwardProblem:
    pde = copy.copy(problem.pde)
    pde.counter = SolveCounter()
    return dataclasses.replace(problem.forward, pde=pde)


def _run_method(problem: Problem, settings: MethodSettings, seed: int) -> dict:
    forward = _forward_with_own_counter(problem)
    post = problem.posterior
    t0 = time.perf_counter()
    if settings.name == "pcn":
        res = run_pcn(forward, problem.spectrum, settings.pcn_config(seed))
        samples = res.samples
        wall = time.perf_counter() - t0
        return {
            "name": "pcn",
            "kind": "pcn",
            "result": res,
            "mean": samples.mean(axis=0),
            "empirical": covariance_matrix_repr(samples),
            "formula": None,
            "solves": forward.pde.counter.count,
            "wall": wall,
            "steps": res.phi_trace.size,
        }
    res = run_chain(
        forward,
        problem.spectrum,
        problem.params,
        post.mode_mean,
        settings.name,
        settings.chain_config(),
        seed=seed,
        truth_coeffs=problem.truth_coeffs,
        reference_coeffs=post.mode_mean,
    )
    out = res.output
    wall = time.perf_counter() - t0
    retained = out.retained_samples
    return {
        "name": settings.name,
        "kind": "sgd",
        "result": res,
        "mean": retained.mean(axis=0),
        "empirical": covariance_matrix_repr(retained) if retained.shape[0] >= 2 else None,
        "formula": covariance_matrix_repr(res.formula_posterior, problem.spectrum),
        "solves": forward.pde.counter.count,
        "wall": wall,
        "steps": out.iterations,
    }


def _write_rows(path, rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def _node_columns(mesh) -> tuple[list[str], np.ndarray]:
    nodes = np.asarray(mesh.nodes)
    if nodes.ndim == 1:
        return ["x"], nodes[:, None]
    return ["x", "y"], nodes


def _write_fields(path, mesh, columns: dict) -> None:
    names, coords = _node_columns(mesh)
    arr = np.column_stack([coords] + [np.asarray(v, float) for v in columns.values()])
    header = ",".join(["node"] + names + list(columns))
    idx = np.arange(coords.shape[0])[:, None]
    np.savetxt(path, np.column_stack([idx, arr]), delimiter=",", header=header, comments="", fmt=["%d"] + ["%.17g"] * arr.shape[1])


def _plots(out: Path, problem: Problem, runs: list[dict]) -> None:
    mesh = problem.mesh
    if mesh.dimension == 1:
        x = mesh.nodes
        for r in runs:
            var = np.clip(np.diag((r["formula"] or r["empirical"]).matrix), 0, None)
            lo, hi = credibility_band(r["mean"], var)
            svgplot.line_plot(
                out / f"{r['name']}_band.svg",
                [
                    {"x": x, "y": hi, "fill_to": lo, "label": "95% band"},
                    {"x": x, "y": r["mean"], "label": f"{r['name']} mean"},
                    {"x": x, "y": problem.truth, "label": "truth", "dash": True, "color": "black"},
                ],
                title=f"{r['name']}: mean and 95% band",
                xlabel="x",
                ylabel="u",
            )
    sgd = [r for r in runs if r["kind"] == "sgd"]
    if sgd:
        series = []
        for r in sgd:
            e = r["result"].output.relative_error_series
            series.append({"x": np.arange(1, e.size + 1), "y": e, "label": r["name"]})
        svgplot.line_plot(out / "error_curves.svg", series, title="relative error vs truth", xlabel="outer step", ylabel="error", logy=True)
    ref = problem.posterior.covariance
    svgplot.heatmap(out / "covariance_oracle.svg", ref, title="exact posterior covariance")
    for r in runs:
        fld = r["formula"] or r["empirical"]
        svgplot.heatmap(out / f"covariance_{r['name']}.svg", fld.matrix, title=f"{r['name']} covariance ({fld.provenance})")


def _versions() -> dict:
    return {"ivi": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def default_output_dir(cfg: ExperimentConfig) -> Path:
    root = Path(os.environ.get(ENV_OUTPUT_ROOT, "ivi-runs"))
    return root / f"{cfg.problem}-seed{cfg.seed}-{cfg.config_hash()[:8]}"


def run_experiment(cfg: ExperimentConfig, out_dir=None, dry_run: bool = False, parallel: bool = False) -> dict:
    """Run every configured method and write the artifact directory.

    Returns a summary dict (also written to ``manifest.json``). With
    ``dry_run`` nothing is solved and nothing is written; the summary holds
    the config echo and the solve forecast. On failure a ``FAILED`` marker is
    written next to whatever artifacts already exist and the error re-raised.
    """
    forecast = forecast_solves(cfg)
    if dry_run:
        return {"dry_run": True, "config": cfg.to_dict(), "forecast": forecast, "total_forecast": sum(forecast.values())}
    out = Path(out_dir if out_dir is not None else (cfg.output_dir or default_output_dir(cfg)))
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    try:
        return _run(cfg, out, forecast, parallel)
    except Exception:
        marker.write_text(traceback.format_exc())
        raise


def _run(cfg: ExperimentConfig, out: Path, forecast: dict, parallel: bool) -> dict:
    seeds = method_seeds(cfg.seed)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    t_setup = time.perf_counter()
    problem = build_problem(cfg)
    t_setup = time.perf_counter() - t_setup
    spec, post, mesh = problem.spectrum, problem.posterior, problem.mesh
    spec.to_csv(out / "spectrum.csv")
    _write_fields(out / "posterior_oracle.csv", mesh, {"truth": problem.truth, "mean": post.mean, "variance": post.variance})

    if parallel and len(cfg.methods) > 1:
        with ThreadPoolExecutor(max_workers=len(cfg.methods)) as pool:
            futs = [pool.submit(_run_method, problem, m, seeds[m.name]) for m in cfg.methods]
            runs = [f.result() for f in futs]
    else:
        runs = [_run_method(problem, m, seeds[m.name]) for m in cfg.methods]

    mass = spec.mass
    mean_rows = []
    pcn_run = next((r for r in runs if r["name"] == "pcn"), None)
    for r in runs:
        name = r["name"]
        row = {
            "method": name,
            "mean_vs_oracle": relative_l2_error(r["mean"], post.mean, mass),
            "mean_vs_truth": relative_l2_error(r["mean"], problem.truth, mass),
        }
        if pcn_run is not None:
            row["mean_vs_pcn"] = relative_l2_error(r["mean"], pcn_run["mean"], mass)
        if r["kind"] == "sgd":
            o = r["result"].output
            row["plateau_error"] = float(np.mean(o.relative_error_series[-max(1, o.relative_error_series.size // 4) :]))
            row["converged_at"] = -1 if o.converged_at is None else o.converged_at + 1
            o.series_csv(out / f"{name}_series.csv")
            o.samples_csv(out / f"{name}_samples.csv")
            r["result"].formula_posterior.to_csv(out / f"{name}_posterior.csv")
        else:
            res = r["result"]
            row["plateau_error"] = float("nan")
            row["converged_at"] = -1
            res.trace_csv(out / "pcn_trace.csv")
            np.savetxt(out / "pcn_samples.csv", res.samples[:: max(1, res.samples.shape[0] // 1000)], delimiter=",", fmt="%.17g")
        mean_rows.append(row)
        var = np.clip(np.diag((r["formula"] or r["empirical"]).matrix), 0, None)
        lo, hi = credibility_band(r["mean"], var)
        _write_fields(out / f"{name}_band.csv", mesh, {"mean": r["mean"], "lower": lo, "upper": hi, "truth": problem.truth})
    _write_rows(out / "mean_errors.csv", mean_rows)

    refs = {"oracle": CovarianceField(post.covariance, "exact")}
    if pcn_run is not None:
        refs["pcn"] = pcn_run["empirical"]
    table = []
    for ref_name, ref in refs.items():
        for r in runs:
            if r["name"] == ref_name:
                continue
            for source in ("formula", "empirical"):
                fld = r[source]
                if fld is None:
                    continue
                row = covariance_error_table({r["name"]: fld}, ref, TABLE_OFFSETS)[0]
                table.append({"reference": ref_name, "method": r["name"], "source": source} | {k: v for k, v in row.items() if k != "method"})
    _write_rows(out / "covariance_table.csv", table)

    cost = CostReport(
        solves={r["name"]: r["solves"] for r in runs},
        forecast=forecast,
        wall_time={r["name"]: r["wall"] for r in runs},
        per_step_time={r["name"]: r["wall"] / max(1, r["steps"]) for r in runs},
        setup_solves=problem.setup_solves,
    )
    cost.to_csv(out / "cost.csv")
    _plots(out, problem, runs)

    manifest = {
        "seed": cfg.seed,
        "data_seed": cfg.data_seed,
        "method_seeds": seeds,
        "config_hash": cfg.config_hash(),
        "problem_hash": cfg.problem_hash(),
        "problem": cfg.problem,
        "methods": cfg.method_names,
        "versions": _versions(),
        "truncation_level": spec.M,
        "num_modes": spec.num_modes,
        "noise_variance": problem.forward.noise_variance,
        "pde_solves": cost.solves,
        "forecast": forecast,
        "setup_solves": cost.setup_solves,
        "wall_time": cost.wall_time | {"setup": t_setup},
        "per_step_time": cost.per_step_time,
        "parallel": parallel,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest | {"output_dir": str(out), "mean_errors": mean_rows, "covariance_table": table}


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _read_field(path, column: str) -> np.ndarray:
    rows = _read_rows(path)
    return np.array([float(r[column]) for r in rows])


def compare_report(dirs, out_dir=None) -> dict:
    """Merge the tables of several runs of the same problem.

    Each run contributes one row per method with its errors against the exact
    posterior and, in ``*_vs_first`` columns, the errors of its means against
    the same method in the first run. Runs with different problem hashes are
    refused.
    """
    dirs = [Path(d) for d in dirs]
    _require(len(dirs) >= 2, "dirs", "at least two artifact directories are needed")
    manifests = []
    for d in dirs:
        mpath = d / "manifest.json"
        if not d.is_dir() or not mpath.exists():
            raise ValidationError(f"{d}: not an artifact directory (manifest.json missing)")
        with open(mpath) as fh:
            manifests.append(json.load(fh))
    hashes = {m["problem_hash"] for m in manifests}
    if len(hashes) != 1:
        listing = ", ".join(f"{d}={m['problem_hash']}" for d, m in zip(dirs, manifests))
        raise ValidationError(f"problem hashes differ, comparison refused: {listing}")

    first = dirs[0]
    rows = []
    for d in dirs:
        errs = {r["method"]: r for r in _read_rows(d / "mean_errors.csv")}
        cov = _read_rows(d / "covariance_table.csv")
        for method, r in errs.items():
            row = {"run": str(d), "method": method, "mean_vs_oracle": float(r["mean_vs_oracle"])}
            band_path, first_band = d / f"{method}_band.csv", first / f"{method}_band.csv"
            if first_band.exists():
                row["mean_vs_first"] = relative_l2_error(_read_field(band_path, "mean"), _read_field(first_band, "mean"))
            else:
                row["mean_vs_first"] = float("nan")
            for c in cov:
                if c["method"] == method and c["reference"] == "oracle" and c["source"] == ("empirical" if method == "pcn" else "formula"):
                    row["cov_full"] = float(c["full"])
                    for k in TABLE_OFFSETS:
                        row[f"cov_k{k}"] = float(c[f"k{k}"])
            rows.append(row)
    keys = sorted({k for r in rows for k in r}, key=lambda k: (k not in ("run", "method"), k))
    rows = [{k: r.get(k, float("nan")) for k in keys} for r in rows]

    # wide view: one row per run, one mean-error column per method
    methods = sorted({r["method"] for r in rows})
    wide = []
    for d in dirs:
        w = {"run": str(d)}
        for m in methods:
            hit = [r for r in rows if r["run"] == str(d) and r["method"] == m]
            w[f"{m}_mean_error"] = hit[0]["mean_vs_oracle"] if hit else float("nan")
        wide.append(w)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "compare.csv", rows)
        _write_rows(out / "compare_wide.csv", wide)
        x = np.arange(1, len(dirs) + 1)
        series = [{"x": x, "y": [w[f"{m}_mean_error"] for w in wide], "label": m} for m in methods]
        svgplot.line_plot(out / "compare_errors.svg", series, title="mean error vs exact posterior", xlabel="run", ylabel="error", logy=True)
    return {"rows": rows, "wide": wide, "problem_hash": hashes.pop()}


def _spectrum_command(cfg: ExperimentConfig, out) -> dict:
    dim = 1 if cfg.problem == "elliptic1d" else 2
    mesh = build_mesh(dim, cfg.mesh_n)
    spec = prior_spectrum(build_prior(mesh, cfg.alpha_prior), cfg.C_M)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        spec.to_csv(Path(out) / "spectrum.csv")
    ratios = spec.c / spec.c[0]
    return {
        "truncation_level": spec.M,
        "num_modes": spec.num_modes,
        "C_M": cfg.C_M,
        "truncation_warning": spec.truncation_warning,
        "leading_eigenvalues": spec.c[:10].tolist(),
        "ratio_at_M": float(ratios[spec.M - 1]),
    }


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ivi", description="SGD-based variational inference for linear PDE inverse problems.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help=f"artifact directory (default under ${ENV_OUTPUT_ROOT})")
    r.add_argument("--dry-run", action="store_true", help="print the solve forecast and exit")
    r.add_argument("--parallel", action="store_true", help="run the methods concurrently")
    c = sub.add_parser("compare", help="merge the tables of several runs")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--out", default=None, help="where to write compare.csv and plots")
    s = sub.add_parser("spectrum", help="report the prior spectrum and truncation level")
    s.add_argument("config")
    s.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                _require(args.seed >= 0, "--seed", "must be nonnegative")
                cfg.seed = args.seed
            summary = run_experiment(cfg, args.out, dry_run=args.dry_run, parallel=args.parallel)
            if args.dry_run:
                print(json.dumps(summary, indent=2, sort_keys=True))
            else:
                print(f"artifacts written to {summary['output_dir']}")
                for row in summary["mean_errors"]:
                    print(f"  {row['method']:6s} solves={summary['pde_solves'][row['method']]:>8d}  mean_vs_oracle={row['mean_vs_oracle']:.4g}")
        elif args.command == "compare":
            rep = compare_report(args.dirs, args.out)
            for w in rep["wide"]:
                print(json.dumps(w))
        else:
            print(json.dumps(_spectrum_command(load_config(args.config), args.out), indent=2))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
