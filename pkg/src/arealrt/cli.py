"""Command-line surface tying the pipeline together.

Subcommands: ``fit`` (run the MCMC and dump draws + diagnostics + fitted
curves into a run directory), ``rt`` and ``risk`` (derive reproduction
numbers and risk tables from a saved run without refitting), ``simulate``
(synthetic data in the same file formats the pipeline reads), ``diagnose``
(recompute convergence diagnostics from a draw dump) and ``basis-dump``
(write the spline design matrix).

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import data_io
from .model import SpatioTemporalPoissonModel, diagnostics, fitted_curves
from .rt import build_infectivity, cori_rt, regional_rt, smoothed_rt
from .simulate import SimulationSpec, simulate_from_model, simulate_renewal
from .spatial import lattice_graph, path_graph
from .splines import build_basis
from .surveillance import pattern_correlation, risk_table

_TABLE_FMT = "%.10g"


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on bad usage, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="arealrt", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_fit = sub.add_parser("fit", help="fit the model and save a run dir")
    p_fit.add_argument("--counts", required=True)
    p_fit.add_argument("--population", required=True)
    p_fit.add_argument("--adjacency", required=True)
    p_fit.add_argument("--config", default=None,
                       help="key = value file; defaults apply if omitted")
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_fit.add_argument("--chains", type=int, default=None)
    p_fit.add_argument("--iterations", type=int, default=None)
    p_fit.add_argument("--burn-in", type=int, default=None)
    p_fit.add_argument("--thin", type=int, default=None)
    p_fit.add_argument("--window-days", type=int, default=None,
                       help="refit on the last N days only")
    p_fit.add_argument("--allow-islands", action="store_true")
    p_fit.add_argument("--no-store-eps", action="store_true",
                       help="drop eps draws (saves memory at full scale)")
    p_fit.add_argument("--n-jobs", type=int, default=1)
    p_fit.add_argument("--progress", action="store_true")

    p_rt = sub.add_parser("rt", help="R_t tables from a saved run")
    p_rt.add_argument("--run", required=True, help="directory written by fit")
    p_rt.add_argument("--tau", type=int, default=None,
                      help="also write the windowed count-ratio baseline")

    p_risk = sub.add_parser("risk", help="risk classification tables")
    p_risk.add_argument("--run", required=True)
    p_risk.add_argument("--reference-day", default=None,
                        help="1-based study day or ISO date (default: last)")
    p_risk.add_argument("--rate-cuts", default=None,
                        help="comma-separated ascending thresholds")
    p_risk.add_argument("--rt-cuts", default=None)
    p_risk.add_argument("--plot", action="store_true",
                        help="also write scatter/heatmap PNGs")

    p_sim = sub.add_parser("simulate", help="generate synthetic data files")
    p_sim.add_argument("--mode", choices=["model", "renewal"],
                       default="model")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--days", type=int, default=56)
    p_sim.add_argument("--grid", default="4x4",
                       help="lattice ROWSxCOLS for the adjacency")
    p_sim.add_argument("--knot-spacing", type=int, default=14)
    p_sim.add_argument("--rho", type=float, default=0.5)
    p_sim.add_argument("--sigma-beta", type=float, default=0.6)
    p_sim.add_argument("--sigma-eps", type=float, default=0.3)
    p_sim.add_argument("--population", type=float, default=10000.0)
    p_sim.add_argument("--daily-rate", type=float, default=250.0,
                       help="model mode: baseline daily cases per 100k")
    p_sim.add_argument("--r-schedule", default="1.3",
                       help="renewal mode: VALUE or VALUExDAYS,VALUExDAYS,...")
    p_sim.add_argument("--import-rate", type=float, default=50.0)
    p_sim.add_argument("--si-mean", type=float, default=4.7)
    p_sim.add_argument("--si-sd", type=float, default=2.9)
    p_sim.add_argument("--s-max", type=int, default=25)

    p_diag = sub.add_parser("diagnose", help="R-hat / n_eff from a draw dump")
    p_diag.add_argument("--run", required=True)

    p_basis = sub.add_parser("basis-dump", help="write the design matrix X")
    p_basis.add_argument("--days", type=int, required=True)
    p_basis.add_argument("--knot-spacing", type=int, default=14)
    p_basis.add_argument("--out", required=True)

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _load_run(run_dir):
    run_dir = Path(run_dir)
    if not (run_dir / "draws_scalars.csv").exists():
        raise FileNotFoundError(f"no draws found in {run_dir}; run fit first")
    manifest = data_io.read_manifest(run_dir)
    config = data_io.RunConfig(**manifest["config"])
    dataset = data_io.load_dataset(
        run_dir / "counts.csv", run_dir / "population.csv"
    )
    draws = data_io.load_draws(run_dir)
    basis = build_basis(dataset.J, config.knot_spacing_days)
    return manifest, config, dataset, draws, basis


def _cmd_fit(args):
    config = (
        data_io.load_run_config(args.config)
        if args.config else data_io.RunConfig()
    )
    overrides = {}
    for name, key in [
        ("seed", "seed"), ("chains", "chains"),
        ("iterations", "iterations_per_chain"),
        ("burn_in", "burn_in"), ("thin", "thin"),
    ]:
        value = getattr(args, name)
        if value is not None:
            overrides[key] = value
    if overrides:
        config = dataclasses.replace(config, **overrides)

    dataset = data_io.load_dataset(args.counts, args.population)
    graph = data_io.load_adjacency(
        args.adjacency, dataset.area_ids, allow_islands=args.allow_islands
    )
    if args.window_days is not None:
        dataset = dataset.last_window(args.window_days)

    model = SpatioTemporalPoissonModel(
        knot_spacing=config.knot_spacing_days,
        chains=config.chains,
        iterations=config.iterations_per_chain,
        burn_in=config.burn_in,
        thin=config.thin,
        seed=config.seed,
        rho_mode=config.rho_mode,
        uniform_sd_upper=config.uniform_sd_upper,
        store_eps=not args.no_store_eps,
        n_jobs=args.n_jobs,
        progress=args.progress,
    ).fit(dataset, graph)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    data_io.write_counts(dataset, out / "counts.csv")
    data_io.write_population(dataset, out / "population.csv")
    data_io.write_adjacency(graph, dataset.area_ids, out / "adjacency.csv")
    data_io.write_run_config(config, out / "config.txt")
    files += ["counts.csv", "population.csv", "adjacency.csv", "config.txt"]

    data_io.save_draws(model.draws_, out)
    files += ["draws_scalars.csv", "draws_fields.npz"]

    diagnostics(model.draws_).to_csv(
        out / "posterior_summary.csv", float_format=_TABLE_FMT
    )
    files.append("posterior_summary.csv")

    full = fitted_curves(model.draws_, dataset, model.basis_,
                         include_dow=True)
    trend = fitted_curves(model.draws_, dataset, model.basis_,
                          include_dow=False)
    curves = full.rename(
        columns={"mean": "mean_full", "lo95": "lo95_full",
                 "hi95": "hi95_full"}
    )
    curves["mean_trend"] = trend["mean"]
    curves["lo95_trend"] = trend["lo95"]
    curves["hi95_trend"] = trend["hi95"]
    curves.insert(1, "observed", dataset.counts.sum(axis=0))
    curves.to_csv(out / "fitted_region.csv", index=False,
                  float_format=_TABLE_FMT)
    files.append("fitted_region.csv")

    manifest = data_io.run_manifest(
        config, dataset, model.draws_, model.basis_.K, files
    )
    data_io.write_manifest(manifest, out)
    print(f"run written to {out}")
    return 0


def _cmd_rt(args):
    run_dir = Path(args.run)
    manifest, config, dataset, draws, basis = _load_run(run_dir)
    profile = build_infectivity(config.si_mean, config.si_sd, config.s_max)
    surface = smoothed_rt(draws, basis, profile)
    date_strs = [dataset.dates[t].isoformat() for t in surface.day_indices]

    rt_df = pd.DataFrame({
        "area_id": np.repeat(dataset.area_ids, len(date_strs)),
        "date": np.tile(date_strs, dataset.I),
        "mean": surface.mean.ravel(),
        "lo95": surface.lo95.ravel(),
        "hi95": surface.hi95.ravel(),
        "p_gt_1": surface.p_gt_1.ravel(),
    })
    rt_df.to_csv(run_dir / "rt.csv", index=False, float_format=_TABLE_FMT)

    reg = regional_rt(surface, dataset.populations)
    reg.insert(0, "date", date_strs)
    reg.to_csv(run_dir / "regional_rt.csv", index=False,
               float_format=_TABLE_FMT)
    new_files = ["rt.csv", "regional_rt.csv"]

    if args.tau is not None:
        estimates = cori_rt(dataset.counts.sum(axis=0), profile,
                            tau=args.tau)
        pd.DataFrame({
            "date": [d.isoformat() for d in dataset.dates],
            "cori_rt": estimates,
        }).to_csv(run_dir / "cori_rt.csv", index=False,
                  float_format=_TABLE_FMT)
        new_files.append("cori_rt.csv")

    data_io.declare_files(run_dir, new_files)
    print(f"R_t tables written to {run_dir}")
    return 0


def _parse_reference_day(value, dataset):
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        pass
    from datetime import date

    try:
        target = date.fromisoformat(value)
    except ValueError:
        raise ValueError(
            f"--reference-day must be a study day number or ISO date, "
            f"got {value!r}"
        ) from None
    if target not in dataset.dates:
        raise ValueError(f"{target} outside the study period")
    return dataset.dates.index(target) + 1


def _parse_cuts(text):
    if text is None:
        return None
    return tuple(float(v) for v in text.split(","))


def _cmd_risk(args):
    run_dir = Path(args.run)
    manifest, config, dataset, draws, basis = _load_run(run_dir)
    profile = build_infectivity(config.si_mean, config.si_sd, config.s_max)
    reference_day = _parse_reference_day(args.reference_day, dataset)
    table = risk_table(
        draws, basis, dataset, profile, reference_day=reference_day,
        rate_cuts=_parse_cuts(args.rate_cuts),
        rt_cuts=_parse_cuts(args.rt_cuts),
    )
    table.to_csv(run_dir / "risk.csv", index=False, float_format=_TABLE_FMT)

    corr, peak_days = pattern_correlation(draws, basis)
    labels = [f"day_{d}" for d in peak_days]
    pd.DataFrame(corr, index=labels, columns=labels).to_csv(
        run_dir / "correlation.csv", float_format=_TABLE_FMT
    )
    new_files = ["risk.csv", "correlation.csv"]

    if args.plot:
        new_files += _risk_plots(run_dir, table, corr, labels)
    data_io.declare_files(run_dir, new_files)
    print(f"risk tables written to {run_dir}")
    return 0


def _risk_plots(run_dir, table, corr, labels):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    sc = ax.scatter(table["weekly_rate"], table["rt"],
                    c=table["combined_level"], cmap="RdYlGn_r", vmin=0,
                    vmax=4)
    ax.set_xlabel("weekly cases per 100k")
    ax.set_ylabel("R_t")
    fig.colorbar(sc, label="combined risk level")
    fig.savefig(run_dir / "risk_scatter.png", dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(corr, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(labels)), labels, rotation=90, fontsize=7)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    fig.colorbar(im, label="correlation")
    fig.savefig(run_dir / "correlation.png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    return ["risk_scatter.png", "correlation.png"]


def _parse_grid(text):
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"--grid must look like 4x5, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise ValueError("--grid dimensions must be positive")
    return rows, cols


def _parse_schedule(text, days):
    out = []
    for part in text.split(","):
        if "x" in part:
            value, span = part.split("x")
            out.extend([float(value)] * int(span))
        else:
            out.append(float(part))
    if len(out) == 1:
        return np.full(days, out[0])
    if len(out) < days:
        out.extend([out[-1]] * (days - len(out)))
    return np.array(out[:days])


def _cmd_simulate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, cols = _parse_grid(args.grid)
    if args.mode == "model":
        graph = lattice_graph(rows, cols)
        basis = build_basis(args.days, args.knot_spacing)
        rng = np.random.Generator(np.random.PCG64(args.seed + 1))
        gamma = np.zeros(7)
        gamma[1:] = rng.normal(0.0, 0.2, 6)
        # mu reproducing a flat log rate at the target incidence level
        # (the natural basis spans constants, so the fit is exact)
        level = np.log(args.daily_rate / 1e5)
        mu, *_ = np.linalg.lstsq(basis.X.T, np.full(args.days, level),
                                 rcond=None)
        spec = SimulationSpec(
            graph=graph,
            J=args.days,
            knot_spacing=args.knot_spacing,
            gamma=gamma,
            mu=mu,
            rho=args.rho,
            sigma_beta=np.full(basis.K, args.sigma_beta),
            sigma_eps=args.sigma_eps,
            populations=np.full(graph.I, args.population),
            seed=args.seed,
        )
        dataset, truth = simulate_from_model(spec)
        np.savez(
            out / "truth.npz",
            gamma=truth["gamma"], mu=truth["mu"],
            beta_star=truth["beta_star"], rho=truth["rho"],
            sigma_beta=truth["sigma_beta"], sigma_eps=truth["sigma_eps"],
        )
    else:
        graph = path_graph(rows * cols)
        profile = build_infectivity(args.si_mean, args.si_sd, args.s_max)
        schedule = _parse_schedule(args.r_schedule, args.days)
        dataset, info = simulate_renewal(
            graph.I, args.days, profile, args.seed, schedule,
            import_rate=args.import_rate,
            populations=np.full(graph.I, args.population),
        )
        np.savez(out / "truth.npz", r_schedule=info["r_schedule"])

    data_io.write_counts(dataset, out / "counts.csv")
    data_io.write_population(dataset, out / "population.csv")
    data_io.write_adjacency(graph, dataset.area_ids, out / "adjacency.csv")
    print(f"synthetic data written to {out}")
    return 0


def _cmd_diagnose(args):
    run_dir = Path(args.run)
    draws = data_io.load_draws(run_dir)
    table = diagnostics(draws)
    table.to_csv(sys.stdout, float_format=_TABLE_FMT)
    return 0


def _cmd_basis_dump(args):
    basis = build_basis(args.days, args.knot_spacing)
    df = pd.DataFrame(
        basis.X,
        index=[f"basis_{k + 1}" for k in range(basis.K)],
        columns=[f"day_{j + 1}" for j in range(basis.J)],
    )
    df.to_csv(args.out, float_format="%.17g")
    print(f"{basis.K} basis functions over {basis.J} days -> {args.out}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "rt": _cmd_rt,
    "risk": _cmd_risk,
    "simulate": _cmd_simulate,
    "diagnose": _cmd_diagnose,
    "basis-dump": _cmd_basis_dump,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code or 0
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"arealrt {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failure boundary
        print(f"arealrt {args.command}: failed: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
