"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``. The two distributional
sweeps (criteria 6 and 7) take a few minutes each on one core.
"""

import json
import time

import numpy as np
import pytest

from perfspde.cell_solver import compute_tensor, solve_corrector, effective_gradient_matrix
from perfspde.cli import main
from perfspde.config import Config
from perfspde.drift import Gradient, cell_average_fstar_oracle, eval_effective_drift
from perfspde.experiment import ExperimentPlan, run_sweep, wasserstein1
from perfspde.fields import FieldExpr
from perfspde.geometry import CellSpec, build_cell_grid
from perfspde.macro_solver import prepare_macro, simulate_macro_paths
from perfspde.micro_solver import prepare_micro
from perfspde.noise import SpectralNoiseSpec
from perfspde.stepping import run_batch, step_counts

ZERO = FieldExpr.constant(0.0)


@pytest.fixture
def verdict(capsys):
    """Print one result line outside pytest's capture, then fail if needed."""

    def report(number, passed, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, f"criterion {number}: {detail}"

    return report


def test_01_cell_exactness(verdict):
    start = time.perf_counter()
    t = compute_tensor(CellSpec(0.0, 32))
    elapsed = time.perf_counter() - start
    err = np.abs(t.matrix - np.eye(2)).max()
    ok = err < 1e-10 and t.theta == 1.0 and t.lam == 0.0 and elapsed < 1.0
    verdict(1, ok, f"max|A*-I| = {err:.1e}, theta = {t.theta}, lambda = {t.lam}, {elapsed:.2f} s")


def test_02_coefficient_closed_forms(verdict):
    worst = 0.0
    for rho, m in [(0.25, 8), (0.25, 16), (0.5, 4), (0.5, 16)]:
        grid = build_cell_grid(CellSpec(rho, m))
        worst = max(worst, abs(grid.theta - (1 - rho**2)), abs(grid.lam - 4 * rho))
    verdict(2, worst <= 1e-12, f"max deviation from 1-rho^2 and 4 rho: {worst:.1e}")


def test_03_tensor_properties(verdict):
    start = time.perf_counter()
    alphas, problems = {}, []
    for m in (16, 32, 64):
        t = compute_tensor(CellSpec(0.5, m))
        A = t.matrix
        alphas[m] = t.alpha
        if abs(A[0, 1] - A[1, 0]) > 1e-12:
            problems.append(f"asymmetric at m={m}")
        if abs(A[0, 1]) > 1e-8 or abs(A[0, 0] - A[1, 1]) > 1e-8:
            problems.append(f"anisotropic at m={m}")
        lo, hi = t.eigenvalues
        if not (lo > 0 and hi <= 0.75 + 1e-8):
            problems.append(f"eigenvalues {lo}, {hi} at m={m}")
    if not abs(alphas[64] - alphas[32]) < abs(alphas[32] - alphas[16]):
        problems.append("refinement not contracting")
    elapsed = time.perf_counter() - start
    if elapsed >= 30:
        problems.append(f"took {elapsed:.1f} s")
    verdict(3, not problems, "; ".join(problems) or
            f"alpha = {alphas[16]:.6f}, {alphas[32]:.6f}, {alphas[64]:.6f}; {elapsed:.2f} s")


def test_04_degeneration_equivalence(verdict):
    cfg = Config({"geometry.rho": 0.0, "geometry.m": 8, "geometry.ladder": (8,), "macro.n": 64,
                  "experiment.common_n": 64, "time.T": 0.1, "time.dt": 1e-3, "experiment.paths": 10,
                  "time.sample_times": (0.025, 0.05, 0.1), "experiment.functionals": ((1, 1), (1, 2), (2, 1), (3, 3))})
    data, _ = run_sweep(ExperimentPlan(cfg))
    micro = np.array([r.functionals for r in data.micro[8]])
    macro = np.array([r.functionals for r in data.macro])
    diff = np.abs(micro - macro).max()
    verdict(4, diff < 1e-8, f"max functional difference {diff:.1e} over 10 paths")


def space_time_distance(micro_traj, macro_traj, dt, n_c):
    return np.sqrt(sum(dt / n_c**2 * np.sum((a - b) ** 2) for a, b in zip(micro_traj, macro_traj)))


def test_05_initial_condition_discriminator(verdict):
    start = time.perf_counter()
    cfg = Config({"noise.q0": 0.0, "time.T": 0.05, "geometry.ladder": (4, 8, 16)})
    n_c = 32
    tensor = compute_tensor(CellSpec(0.5, 8))
    n_steps, _ = step_counts(cfg.time.T, cfg.time.dt, ())

    def trajectory(run):
        res = run_batch(run.system, run.drift, run.z0, (None, None), n_steps, [], run.probe.functionals,
                        run.probe.restriction, run.probe.cell_area, keep_trajectory=True)
        return [np.concatenate([run.probe.restriction @ run.z0[:, None]])] + res.trajectory

    macro = {rule: trajectory(prepare_macro(cfg.replace(**{"macro.initial": rule}), tensor, n_c))
             for rule in ("theta_times", "divided")}
    rows, ok = [], True
    for n_eps in cfg.geometry.ladder:
        micro = trajectory(prepare_micro(cfg, n_eps, n_c))
        d_theta = space_time_distance(micro, macro["theta_times"], cfg.time.dt, n_c)
        d_div = space_time_distance(micro, macro["divided"], cfg.time.dt, n_c)
        ok &= d_theta < d_div
        rows.append(f"1/{n_eps}: {d_theta:.3e} vs {d_div:.3e}")
    elapsed = time.perf_counter() - start
    verdict(5, ok and elapsed < 300, "theta*u0 vs u0/theta: " + ", ".join(rows) + f"; {elapsed:.1f} s")


@pytest.fixture(scope="module")
def headline_sweep():
    start = time.perf_counter()
    cfg = Config()  # defaults are the headline setting
    data, report = run_sweep(ExperimentPlan(cfg))
    return data, report, time.perf_counter() - start


def trend_of(report, fid):
    return next(t for t in report["trend"] if t["id"] == fid)


def wasserstein_row(report, fid):
    return [next(f["wasserstein"] for f in lvl["functionals"] if f["id"] == fid) for lvl in report["levels"]]


def test_06_distributional_convergence(verdict, headline_sweep):
    _, report, elapsed = headline_sweep
    trend = trend_of(report, "e1_1")
    w = wasserstein_row(report, "e1_1")
    verdict(6, trend["pass"], f"W1 = {', '.join(f'{x:.4f}' for x in w)}; slope {trend['slope']:.3f} "
                              f"+- {trend['stderr']:.3f}; {elapsed:.0f} s")


def test_07_boundary_noise_transfer(verdict):
    start = time.perf_counter()
    cfg = Config({"noise.g1": ZERO})
    data, report = run_sweep(ExperimentPlan(cfg))
    micro = np.array([r.functionals[-1, 0] for r in data.micro[8]])
    # Monte Carlo zero-noise floor: the same runs with both noises switched off
    quiet = cfg.replace(**{"noise.g2": ZERO, "geometry.ladder": (8,), "experiment.paths": 20})
    floor_data, _ = run_sweep(ExperimentPlan(quiet))
    floor = np.var([r.functionals[-1, 0] for r in floor_data.micro[8]], ddof=1)
    variance = np.var(micro, ddof=1)
    trend = trend_of(report, "e1_1")
    ok = variance > 10 * floor and trend["pass"]
    verdict(7, ok, f"micro variance at 1/8 {variance:.3e} vs floor {floor:.1e}; W1 = "
                   f"{', '.join(f'{x:.4f}' for x in wasserstein_row(report, 'e1_1'))}; slope {trend['slope']:.3f} "
                   f"+- {trend['stderr']:.3f}; {time.perf_counter() - start:.0f} s")


def test_08_ou_exactness(verdict):
    start = time.perf_counter()
    n, dt, T, paths = 64, 1e-3, 0.1, 2000
    cfg = Config({"noise.J": 1, "noise.q0": 1.0, "physics.b": 0.0, "macro.n": n, "time.T": T, "time.dt": dt,
                  "experiment.paths": paths, "experiment.common_n": n, "solver.batch": 500})
    identity = compute_tensor(CellSpec(0.0, 4))
    records = simulate_macro_paths(cfg, identity, range(paths))
    values = np.array([r.functionals[-1, 0] for r in records])
    h = 1.0 / n
    mu = 8 * np.sin(np.pi * h / 2) ** 2 / h**2
    steps = round(T / dt)
    decay = 1.0 / (1 + dt * mu) ** 2
    exact = dt * sum(decay**k for k in range(1, steps + 1))
    # corner averaging onto the common grid shrinks the mode by cos(pi h / 2)^2
    exact *= np.cos(np.pi * h / 2) ** 4
    sample = np.var(values, ddof=1)
    se = exact * np.sqrt(2.0 / (paths - 1))
    elapsed = time.perf_counter() - start
    ok = abs(sample - exact) < 3 * se and elapsed < 300
    verdict(8, ok, f"sample variance {sample:.5e}, exact {exact:.5e}, {abs(sample - exact) / se:.2f} SE; "
                   f"{elapsed:.0f} s")


def test_09_energy_uniformity(verdict, headline_sweep):
    _, report, _ = headline_sweep
    energies = [lvl["energy"] for lvl in report["levels"]]
    ratio = report["energy_ratio"]
    verdict(9, ratio <= 2.0, f"energies {', '.join(f'{e:.4e}' for e in energies)}; max/min = {ratio:.3f}")


def test_10a_polynomial_norm_decay(verdict):
    cfg = Config({"drift.kind": "polynomial", "drift.a": FieldExpr.constant(1.0), "drift.p": 2.0, "noise.q0": 0.0,
                  "physics.u0": FieldExpr("sines", (1.0, 1.0, 3.0)), "time.T": 0.1})
    run = prepare_micro(cfg, 8)
    bulk = []
    run_batch(run.system, run.drift, run.z0, (None, None), 100, [], run.probe.functionals, run.probe.restriction,
              run.probe.cell_area, on_step=lambda s, z: bulk.append(np.sqrt(np.sum(run.grid.bulk_weights() * z[:, 0] ** 2))))
    norms = np.concatenate([[np.sqrt(np.sum(run.grid.bulk_weights() * run.z0**2))], bulk])
    increases = int(np.sum(np.diff(norms) > 0))
    verdict("10a", increases == 0, f"L2 norm {norms[0]:.4f} -> {norms[-1]:.4f} over 100 steps, "
                                   f"{increases} increases")


def test_10b_monotone_sublinear(verdict):
    cfg = Config({"drift.kind": "monotone", "drift.s": 1.0, "geometry.ladder": (4, 8), "experiment.paths": 200})
    data, report = run_sweep(ExperimentPlan(cfg))
    failures = sum(r.failed for r in data.micro[8])
    w = wasserstein_row(report, "e1_1")
    verdict("10b", failures == 0 and w[1] < w[0], f"{failures} failed paths at 1/8; W1 at 1/4 = {w[0]:.4f}, "
                                                  f"at 1/8 = {w[1]:.4f}")


def test_10c_gradient_effective_drift(verdict):
    spec = CellSpec(0.5, 32)
    grid = build_cell_grid(spec)
    correctors = (solve_corrector(grid, 1), solve_corrector(grid, 2))
    tensor = compute_tensor(spec)
    drift = Gradient(("sin", 1.0), ("linear", -0.7))
    flux = effective_gradient_matrix(tensor)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        U, gx, gy = rng.uniform(-3, 3), rng.normal(), rng.normal()
        closed = eval_effective_drift(drift, tensor.theta, flux, 0.0, [U], [0.5], [0.5], ([gx], [gy]))[0]
        h = drift.coefficients(U / tensor.theta)
        worst = max(worst, abs(closed - cell_average_fstar_oracle(h, [gx, gy], correctors, tensor.theta)))
    verdict("10c", worst < 1e-6, f"max |closed form - cell quadrature| = {worst:.1e} over 100 samples")


def test_11_determinism(verdict, tmp_path):
    args = ["sweep", "-q", "--geometry.ladder", "2, 4, 8", "--experiment.paths", "6", "--time.T", "0.02",
            "--solver.batch", "4"]
    outputs = []
    for name in ("first", "second"):
        assert main(args + ["-o", str(tmp_path / name)]) == 0
        outputs.append({f: (tmp_path / name / f).read_bytes() for f in ("samples.csv", "report.json")})
    same = outputs[0] == outputs[1]
    report = json.loads(outputs[0]["report.json"])
    verdict(11, same, f"samples.csv and report.json byte-identical: {same} ({len(report['levels'])} ladder points)")
