"""Command-line entry point.

Every configuration key is also a flag (``--geometry.rho 0.25``); flags win
over the config file, which wins over the defaults. Outputs go to
``experiment.out_dir`` or, when unset, to ``$PERFSPDE_OUTPUT_ROOT/<command>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cell_solver import CellSolverError, HomogenizedTensor, compute_tensor
from .config import KEYS, SCHEMA, Config, ConfigError, help_text, parse_config
from .experiment import ExperimentPlan, build_report, compare_samples, record_rows, run_sweep
from .geometry import CellSpec, GeometryError, zero_extend
from .macro_solver import prepare_macro, simulate_macro_paths
from .micro_solver import prepare_micro, simulate_micro_paths
from .noise import SpectralNoiseSpec, check_trace_condition
from .outputs import (
    CELL_HEADER,
    ENERGY_HEADER,
    PATHWISE_HEADER,
    SAMPLES_HEADER,
    OutputError,
    cell_rows,
    csv_bytes,
    emit_outputs,
    energy_rows,
    json_bytes,
    output_root,
    read_cell_csv,
    read_samples_csv,
    snapshot_files,
)
from .stepping import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

COMMANDS = ("cell", "simulate-micro", "simulate-macro", "sweep", "compare", "check-noise")


def _key_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration keys (override the config file)")
    for key in SCHEMA:
        group.add_argument(
            f"--{key.dotted}", dest=key.dotted, metavar="VALUE", default=None,
            help=f"{key.help} (default: {key.fmt(key.default)})",
        )


def _tensor_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("homogenized coefficients (default: solve the cell problem)")
    group.add_argument("--tensor-csv", type=Path, help="read a11, a12, a22, theta, lambda from a cell table")
    for name in ("a11", "a12", "a22", "theta", "lambda"):
        group.add_argument(f"--{name}", type=float, dest=f"tensor_{name}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="configuration file (key = value lines, [section] headers)")
    common.add_argument("-o", "--out", type=Path, help="output directory (overrides experiment.out_dir)")
    common.add_argument("-q", "--quiet", action="store_true", help="no progress messages")
    _key_flags(common)

    parser = argparse.ArgumentParser(
        prog="perfspde",
        description="Perforated-domain stochastic heat equation: cell problem, micro and homogenized "
                    "simulation, distributional comparison.",
        epilog="configuration keys:\n" + help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("cell", parents=[common], help="solve the cell problem and write cell.csv")

    p = sub.add_parser("simulate-micro", parents=[common], help="sample paths on the perforated grid")
    p.add_argument("--snapshot", choices=("none", "csv", "raw"), default="none",
                   help="dump the zero-extended final state of the first path")

    p = sub.add_parser("simulate-macro", parents=[common], help="sample paths of the homogenized model")
    p.add_argument("--snapshot", choices=("none", "csv", "raw"), default="none",
                   help="dump the final state of the first path")
    _tensor_flags(p)

    p = sub.add_parser("sweep", parents=[common], help="epsilon ladder comparison of both models")
    p.add_argument("--plot", action="store_true", help="also write wasserstein.svg (needs matplotlib)")
    _tensor_flags(p)

    p = sub.add_parser("compare", parents=[common], help="rebuild comparison statistics from a samples table")
    p.add_argument("samples", type=Path, help="samples.csv written by sweep")

    sub.add_parser("check-noise", parents=[common], help="report the noise trace sums and their decay verdict")
    return parser


def load_config(args) -> Config:
    text = ""
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise OutputError(f"cannot read {args.config}: {exc}") from exc
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    overrides = {k: v for k, v in vars(args).items() if k in KEYS and v is not None}
    cfg = cfg.with_overrides(overrides)
    for dotted in overrides:
        problem = KEYS[dotted].check(cfg[dotted])
        if problem:
            raise ConfigError(f"--{dotted} {problem}")
    return cfg


def resolve_tensor(args, cfg: Config) -> tuple[HomogenizedTensor, dict]:
    """Tensor from a cell table, from inline values, or from the cell solver."""
    inline = {n: getattr(args, f"tensor_{n}", None) for n in ("a11", "a12", "a22", "theta", "lambda")}
    csv_path = getattr(args, "tensor_csv", None)
    if csv_path is not None:
        row = read_cell_csv(csv_path)
        missing = [n for n in ("a11", "a12", "a22", "theta", "lambda") if n not in row]
        if missing:
            raise ConfigError(f"{csv_path}: missing columns {', '.join(missing)}")
        tensor = HomogenizedTensor.from_values(row["a11"], row["a12"], row["a22"], row["theta"], row["lambda"])
        return tensor, {"source": "csv", "path": str(csv_path), **tensor.csv_row()}
    given = [n for n, v in inline.items() if v is not None]
    if given:
        if len(given) != len(inline):
            raise ConfigError("inline tensor needs all of --a11 --a12 --a22 --theta --lambda")
        if not 0 < inline["theta"] <= 1:
            raise ConfigError("--theta must lie in (0, 1]")
        tensor = HomogenizedTensor.from_values(inline["a11"], inline["a12"], inline["a22"], inline["theta"],
                                               inline["lambda"])
        if tensor.coercivity <= 0:
            raise ConfigError("inline tensor is not positive definite")
        return tensor, {"source": "inline", **tensor.csv_row()}
    tensor = compute_tensor(CellSpec(cfg.geometry.rho, cfg.geometry.m), cfg.solver.cell_tol)
    return tensor, {"source": "cell solver", **tensor.csv_row()}


def out_dir(args, cfg: Config) -> Path:
    if args.out is not None:
        return args.out
    if cfg.experiment.out_dir:
        return Path(cfg.experiment.out_dir)
    return output_root() / args.command


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _noise(cfg: Config) -> SpectralNoiseSpec:
    return SpectralNoiseSpec(cfg.noise.J, cfg.noise.gamma, cfg.noise.q0, cfg.noise.g1, cfg.noise.g2)


def cmd_cell(args, cfg: Config) -> dict:
    tensor = compute_tensor(CellSpec(cfg.geometry.rho, cfg.geometry.m), cfg.solver.cell_tol)
    _say(args, f"A* = {tensor.matrix.tolist()}  theta = {tensor.theta!r}  lambda = {tensor.lam!r}")
    files = {"cell.csv": csv_bytes(CELL_HEADER, cell_rows([tensor]))}
    return emit_outputs(out_dir(args, cfg), files, cfg, {"tensor": {"source": "cell solver", **tensor.csv_row()}})


def cmd_simulate_micro(args, cfg: Config) -> dict:
    n_eps = cfg.geometry.n_eps
    run = prepare_micro(cfg, n_eps)
    _say(args, f"micro grid {run.grid.n}x{run.grid.n}, {run.grid.n_dof} unknowns, {cfg.experiment.paths} paths")
    ids = range(cfg.experiment.paths)
    records = simulate_micro_paths(cfg, n_eps, ids, keep_final=args.snapshot != "none", run=run)
    eps = 1.0 / n_eps
    files = {
        "samples.csv": csv_bytes(SAMPLES_HEADER, record_rows(eps, "micro", records, cfg.experiment.functionals,
                                                             cfg.time.T)),
        "energy.csv": csv_bytes(ENERGY_HEADER, energy_rows(eps, "micro", records)),
    }
    if args.snapshot != "none" and records:
        field = zero_extend(records[0].final, run.grid)
        files.update(snapshot_files("final_path0", field, run.grid.h, cfg.time.T, args.snapshot))
    failures = sum(r.failed for r in records)
    return emit_outputs(out_dir(args, cfg), files, cfg, {"failed_paths": failures})


def cmd_simulate_macro(args, cfg: Config) -> dict:
    tensor, provenance = resolve_tensor(args, cfg)
    run = prepare_macro(cfg, tensor)
    ids = range(cfg.experiment.paths)
    records = simulate_macro_paths(cfg, tensor, ids, keep_final=args.snapshot != "none", run=run)
    files = {
        "samples.csv": csv_bytes(SAMPLES_HEADER, record_rows(0.0, "macro", records, cfg.experiment.functionals,
                                                             cfg.time.T)),
        "energy.csv": csv_bytes(ENERGY_HEADER, energy_rows(0.0, "macro", records)),
    }
    if args.snapshot != "none" and records:
        n = run.op.n
        field = np.zeros((n + 1) * (n + 1))
        field[run.op.dof_nodes] = records[0].final
        files.update(snapshot_files("final_path0", field.reshape(n + 1, n + 1), 1.0 / n, cfg.time.T,
                                    args.snapshot))
    failures = sum(r.failed for r in records)
    return emit_outputs(out_dir(args, cfg), files, cfg, {"tensor": provenance, "failed_paths": failures})


def wasserstein_plot(report: dict) -> bytes:
    """SVG of the Wasserstein distances against epsilon on log axes."""
    import io

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "perfspde"
    eps = [lvl["epsilon"] for lvl in report["levels"]]
    fig, ax = plt.subplots(figsize=(5, 4))
    for j, entry in enumerate(report["levels"][0]["functionals"]):
        dist = [lvl["functionals"][j]["wasserstein"] for lvl in report["levels"]]
        ax.loglog(eps, dist, "o-", label=f"{entry['id']} at t={entry['time']:g}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("Wasserstein-1, micro vs homogenized")
    ax.legend()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def cmd_sweep(args, cfg: Config) -> dict:
    plan = ExperimentPlan(cfg)
    tensor, provenance = resolve_tensor(args, cfg)

    def progress(done, total):
        _say(args, f"  {done}/{total} paths")

    data, report = run_sweep(plan, tensor, progress)
    pathwise = ((1.0 / n, pid, d) for n in plan.ladder for pid, d in enumerate(data.pathwise[n]))
    energy = [row for n in plan.ladder for row in energy_rows(1.0 / n, "micro", data.micro[n])]
    energy += list(energy_rows(0.0, "macro", data.macro))
    files = {
        "samples.csv": csv_bytes(SAMPLES_HEADER, data.sample_rows()),
        "report.json": json_bytes(report),
        "energy.csv": csv_bytes(ENERGY_HEADER, energy),
        "pathwise.csv": csv_bytes(PATHWISE_HEADER, pathwise),
        "cell.csv": csv_bytes(CELL_HEADER, cell_rows([tensor])),
    }
    if args.plot:
        files["wasserstein.svg"] = wasserstein_plot(report)
    for trend in report["trend"]:
        _say(args, f"{trend['id']} t={trend['time']:g}: slope {trend.get('slope', float('nan')):.3f} "
                   f"-> {'decreasing' if trend['pass'] else 'no clear decrease'}")
    return emit_outputs(out_dir(args, cfg), files, cfg, {"tensor": provenance})


def cmd_compare(args, cfg: Config) -> dict:
    rows = read_samples_csv(args.samples)
    report = compare_samples(rows)
    files = {"report.json": json_bytes(report)}
    return emit_outputs(out_dir(args, cfg), files, cfg, {"samples": str(args.samples)})


def cmd_check_noise(args, cfg: Config) -> dict:
    spec = _noise(cfg)
    lines = []
    for noise_id in (1, 2):
        rep = check_trace_condition(spec, noise_id)
        lines.append(f"noise {noise_id}: J={rep.J} gamma={rep.gamma!r} partial trace sum {rep.partial_sum!r} "
                     f"({rep.verdict})")
    print("\n".join(lines))
    return {}


HANDLERS = {
    "cell": cmd_cell,
    "simulate-micro": cmd_simulate_micro,
    "simulate-macro": cmd_simulate_macro,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "check-noise": cmd_check_noise,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        manifest = HANDLERS[args.command](args, cfg)
    except (ConfigError, GeometryError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, CellSolverError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if manifest.get("files"):
        _say(args, f"wrote {', '.join(manifest['files'])} and manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
