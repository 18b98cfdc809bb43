"""Monte Carlo epsilon sweeps comparing the perforated and homogenized models.

For every ladder point the same path ids are simulated with both models;
probes (sine-mode functionals at the sample times and the space-time L2 norm
on the common grid) are compared through their empirical laws.

The homogenized model does not depend on epsilon, so its paths are simulated
once and compared against every ladder point. In shared coupling the
homogenized path ``p`` uses exactly the noise increments of micro path ``p``;
in independent coupling it draws from a disjoint address range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cell_solver import HomogenizedTensor, compute_tensor
from .config import Config
from .geometry import CellSpec
from .macro_solver import MACRO_PATH_OFFSET, prepare_macro
from .micro_solver import common_grid_size, prepare_micro
from .noise import SpectralNoiseSpec, path_increments
from .probes import functional  # noqa: F401  (part of the experiment interface)
from .stepping import PathRecord, records_from_batch, run_batch, step_counts

L2_FUNCTIONAL = "l2norm"


def functional_id(mode: tuple[int, int]) -> str:
    return f"e{mode[0]}_{mode[1]}"


def wasserstein1(samples_a, samples_b) -> float:
    """Wasserstein-1 distance between two empirical measures on the line."""
    a = np.asarray(samples_a, float)
    b = np.asarray(samples_b, float)
    if a.size == 0 or b.size == 0:
        raise ValueError("Wasserstein distance needs nonempty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(stats.wasserstein_distance(a, b))


@dataclass(frozen=True)
class TrendVerdict:
    slope: float
    intercept: float
    stderr: float
    residual: float
    passed: bool


def trend_check(epsilons, distances) -> TrendVerdict:
    """Least-squares fit of ``log(distance)`` against ``log(epsilon)``.

    Passes when the slope is positive by more than one fitted standard error,
    i.e. the distance shrinks with epsilon.
    """
    eps = np.asarray(epsilons, float)
    dist = np.asarray(distances, float)
    if eps.size < 3 or eps.size != dist.size:
        raise ValueError("trend check needs at least three (epsilon, distance) pairs")
    with np.errstate(divide="ignore", invalid="ignore"):
        x, y = np.log(eps), np.log(dist)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("distances and epsilons must be finite and positive")
    fit = stats.linregress(x, y)
    resid = y - (fit.intercept + fit.slope * x)
    stderr = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    return TrendVerdict(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        stderr=stderr,
        residual=float(np.sqrt(np.mean(resid**2))),
        passed=bool(fit.slope - stderr > 0),
    )


@dataclass(frozen=True)
class ExperimentPlan:
    """Ladder, sample sizes and probes of a sweep; the full config rides along."""

    config: Config

    def __post_init__(self):
        if self.config.experiment.paths < 2:
            raise ValueError("need at least two paths per ladder point")

    @classmethod
    def from_config(cls, cfg: Config) -> "ExperimentPlan":
        return cls(cfg)

    @property
    def ladder(self) -> tuple[int, ...]:
        return self.config.geometry.ladder

    @property
    def epsilons(self) -> list[float]:
        return [1.0 / n for n in self.ladder]

    @property
    def paths(self) -> int:
        return self.config.experiment.paths

    @property
    def modes(self) -> tuple:
        return self.config.experiment.functionals

    @property
    def coupling(self) -> str:
        return self.config.experiment.coupling

    @property
    def T(self) -> float:
        return self.config.time.T

    @property
    def sample_times(self) -> tuple[float, ...]:
        return self.config.sample_times

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def common_n(self) -> int:
        return common_grid_size(self.config)

    def functional_ids(self) -> list[str]:
        return [functional_id(m) for m in self.modes] + [L2_FUNCTIONAL]


def record_rows(eps: float, model: str, records, modes, T: float):
    """Sample-table rows of one model's paths: every mode at every sample time, then the L2 norm."""
    ids = [functional_id(m) for m in modes]
    for rec in records:
        for k, t in enumerate(rec.sample_times):
            for f, fid in enumerate(ids):
                yield eps, model, rec.path_id, fid, t, float(rec.functionals[k, f])
        yield eps, model, rec.path_id, L2_FUNCTIONAL, T, rec.l2_norm


@dataclass
class SweepData:
    """Raw per-path records of a sweep."""

    plan: ExperimentPlan
    tensor: HomogenizedTensor
    micro: dict[int, list[PathRecord]]
    macro: list[PathRecord]
    pathwise: dict[int, np.ndarray] = field(default_factory=dict)

    def sample_rows(self):
        """Rows ``(epsilon, model, path_id, functional_id, sample_time, value)`` in fixed order."""
        plan = self.plan
        for n_eps in plan.ladder:
            eps = 1.0 / n_eps
            yield from record_rows(eps, "micro", self.micro[n_eps], plan.modes, plan.T)
            yield from record_rows(eps, "macro", self.macro, plan.modes, plan.T)


def _moments(values: np.ndarray) -> dict:
    if values.size == 0:
        return {"mean": math.nan, "std": math.nan, "count": 0}
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return {"mean": float(np.mean(values)), "std": std, "count": int(values.size)}


def energy_diagnostic(records: list[PathRecord]) -> float:
    """Mean over finished paths of ``|z(T)|^2_X0 + sum dt |z|^2_X1``."""
    vals = [r.energy_x0[-1] + r.energy_x1 for r in records if not r.failed]
    return float(np.mean(vals)) if vals else math.nan


def compare_samples(rows) -> dict:
    """Per-epsilon statistics and trend fits from sample rows.

    ``rows`` are ``(epsilon, model, path_id, functional_id, sample_time, value)``
    tuples; non-finite values (failed paths) are skipped. Probes keep the order
    of first appearance, ladder points are sorted by decreasing epsilon.
    """
    groups: dict = {}
    probes: list = []
    for eps, model, _pid, fid, t, value in rows:
        probe = (fid, float(t))
        if probe not in probes:
            probes.append(probe)
        groups.setdefault((float(eps), probe, model), []).append(float(value))
    epsilons = sorted({key[0] for key in groups}, reverse=True)
    levels = []
    for eps in epsilons:
        entries = []
        for probe in probes:
            a = np.array(groups.get((eps, probe, "micro"), []))
            b = np.array(groups.get((eps, probe, "macro"), []))
            a, b = a[np.isfinite(a)], b[np.isfinite(b)]
            w = wasserstein1(a, b) if a.size and b.size else math.nan
            entries.append({"id": probe[0], "time": probe[1], "micro": _moments(a), "macro": _moments(b),
                            "wasserstein": w})
        levels.append({"epsilon": eps, "functionals": entries})
    trends = []
    if len(epsilons) >= 3:
        for j, (fid, t) in enumerate(probes):
            dists = [lvl["functionals"][j]["wasserstein"] for lvl in levels]
            try:
                v = trend_check(epsilons, dists)
                trends.append({"id": fid, "time": t, "slope": v.slope, "intercept": v.intercept,
                               "stderr": v.stderr, "residual": v.residual, "pass": v.passed})
            except ValueError as exc:
                trends.append({"id": fid, "time": t, "error": str(exc), "pass": False})
    return {"levels": levels, "trend": trends}


def build_report(data: SweepData) -> dict:
    """Comparison statistics as a JSON-ready dictionary (no timestamps)."""
    plan = data.plan
    comparison = compare_samples(data.sample_rows())
    by_eps = {lvl["epsilon"]: lvl for lvl in comparison["levels"]}
    levels = []
    for n_eps in plan.ladder:
        eps = 1.0 / n_eps
        micro = data.micro[n_eps]
        entry = {
            "epsilon": eps,
            "n_eps": n_eps,
            "micro_failures": sum(r.failed for r in micro),
            "macro_failures": sum(r.failed for r in data.macro),
            "energy": energy_diagnostic(micro),
        }
        if n_eps in data.pathwise:
            finite = data.pathwise[n_eps][np.isfinite(data.pathwise[n_eps])]
            entry["pathwise_l2_mean"] = float(np.mean(finite)) if finite.size else math.nan
        entry["functionals"] = by_eps[eps]["functionals"] if eps in by_eps else []
        levels.append(entry)
    energies = [lvl["energy"] for lvl in levels]
    ok = energies and all(np.isfinite(e) and e > 0 for e in energies)
    t = data.tensor
    return {
        "plan": {
            "ladder": list(plan.ladder), "epsilons": plan.epsilons, "paths": plan.paths,
            "coupling": plan.coupling, "T": plan.T, "dt": plan.config.time.dt,
            "sample_times": list(plan.sample_times), "seed": plan.seed, "common_n": plan.common_n,
            "functionals": plan.functional_ids(),
        },
        "tensor": {"a11": t.matrix[0, 0], "a12": t.matrix[0, 1], "a21": t.matrix[1, 0], "a22": t.matrix[1, 1],
                   "theta": t.theta, "lambda": t.lam, "rho": t.rho, "m": t.m},
        "levels": levels,
        "trend": comparison["trend"],
        "energy_ratio": max(energies) / min(energies) if ok else math.nan,
        "micro_failures": sum(lvl["micro_failures"] for lvl in levels),
        "macro_failures": sum(r.failed for r in data.macro),
    }


def run_sweep(plan: ExperimentPlan, tensor: HomogenizedTensor | None = None, progress=None) -> tuple[SweepData, dict]:
    """Simulate every ladder point and the homogenized model, then compare.

    Paths advance in blocks of ``solver.batch`` columns; results are merged in
    (epsilon, path id) order so the block size never changes the output.
    """
    cfg = plan.config
    if tensor is None:
        tensor = compute_tensor(CellSpec(cfg.geometry.rho, cfg.geometry.m), cfg.solver.cell_tol)
    n_c = plan.common_n
    for n_eps in plan.ladder:
        if (n_eps * cfg.geometry.m) % n_c:
            raise ValueError(f"common grid {n_c} does not divide the micro grid {n_eps * cfg.geometry.m}")
    if cfg.macro.n % n_c:
        raise ValueError(f"common grid {n_c} does not divide the macro grid {cfg.macro.n}")

    noise = SpectralNoiseSpec(cfg.noise.J, cfg.noise.gamma, cfg.noise.q0, cfg.noise.g1, cfg.noise.g2)
    n_steps, steps = step_counts(cfg.time.T, cfg.time.dt, plan.sample_times)
    macro_run = prepare_macro(cfg, tensor, n_c)
    micro_runs = {n_eps: prepare_micro(cfg, n_eps, n_c) for n_eps in plan.ladder}
    offset = 0 if plan.coupling == "shared" else MACRO_PATH_OFFSET

    micro: dict[int, list[PathRecord]] = {n: [] for n in plan.ladder}
    macro: list[PathRecord] = []
    pathwise: dict[int, list] = {n: [] for n in plan.ladder}
    ids_all = list(range(plan.paths))
    batch = cfg.solver.batch
    for start in range(0, len(ids_all), batch):
        ids = ids_all[start:start + batch]
        inc_micro = path_increments(noise, ids, n_steps, cfg.time.dt, cfg.seed)
        inc_macro = inc_micro if offset == 0 else path_increments(
            noise, [i + offset for i in ids], n_steps, cfg.time.dt, cfg.seed)
        results = {}
        for key, run, inc in [("macro", macro_run, inc_macro)] + [(n, micro_runs[n], inc_micro) for n in plan.ladder]:
            z = np.repeat(run.z0[:, None], len(ids), axis=1)
            results[key] = run_batch(
                run.system, run.drift, z, inc, n_steps, steps, run.probe.functionals, run.probe.restriction,
                run.probe.cell_area, cfg.solver.blowup_cap,
            )
        macro.extend(records_from_batch(results["macro"], ids, plan.sample_times))
        macro_final = macro_run.probe.restriction @ results["macro"].final
        for n_eps in plan.ladder:
            res = results[n_eps]
            micro[n_eps].extend(records_from_batch(res, ids, plan.sample_times))
            diff = micro_runs[n_eps].probe.restriction @ res.final - macro_final
            dist = np.sqrt(np.sum(diff * diff, axis=0) / n_c**2)
            dist[(res.failed_step >= 0) | (results["macro"].failed_step >= 0)] = np.nan
            pathwise[n_eps].extend(dist.tolist())
        if progress is not None:
            progress(min(start + batch, len(ids_all)), len(ids_all))

    data = SweepData(plan, tensor, micro, macro, {n: np.array(v) for n, v in pathwise.items()})
    return data, build_report(data)
