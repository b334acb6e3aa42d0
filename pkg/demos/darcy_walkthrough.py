"""Linearized Darcy permeability inversion on a coarse 2D mesh.

Uses a 20x20 inversion mesh so the script finishes in a few seconds; the
shipped config uses 50x50.
"""
from ivi import experiment_cli as cli
from ivi.diagnostics import relative_l2_error
from ivi.regularization_theory import error_decay_monitor

cfg = cli.config_from_dict(cli.load_config("configs/darcy2d.json").to_dict() | {"mesh_n": 20, "fine_n": 200})
problem = cli.build_problem(cfg)
print(f"mesh {cfg.mesh_n}x{cfg.mesh_n}, M = {problem.spectrum.M}, setup solves = {problem.setup_solves}")
seeds = cli.method_seeds(cfg.seed)
for m in cfg.methods:
    run = cli._run_method(problem, m, seeds[m.name])
    report = error_decay_monitor(run["result"].output.relative_error_series)
    err = relative_l2_error(run["mean"], problem.posterior.mean, problem.spectrum.mass)
    print(f"{m.name:6s} solves={run['solves']:6d}  plateau vs truth={report.plateau:.4f}  mean vs exact={err:.2e}")
