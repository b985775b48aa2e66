"""Ingestion, validation and output of surveillance data and run results.

File formats (all delimited text, comma-separated, one header line):

* counts:     area_id, date (ISO-8601), count
* population: area_id, population
* adjacency:  area_id_a, area_id_b   (one undirected edge per row)
* config:     ``key = value`` lines mirroring :class:`RunConfig`

Missing (area, date) rows are zero-filled with a logged warning: the feeds
are daily incident counts where absence means no reported cases. Areas are
ordered lexicographically and dates ascending so every matrix and output
is reproducible across runs and machines.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass
from datetime import date as _date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .spatial import AdjacencyGraph

__all__ = [
    "SurveillanceDataset",
    "RunConfig",
    "load_counts",
    "load_population",
    "load_dataset",
    "load_adjacency",
    "load_run_config",
    "write_run_config",
    "write_counts",
    "write_population",
    "write_adjacency",
    "emit_results",
    "save_draws",
    "load_draws",
    "run_manifest",
    "write_manifest",
    "read_manifest",
    "declare_files",
]

logger = logging.getLogger("arealrt")

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class SurveillanceDataset:
    """Area x day observed counts with populations and a calendar anchor.

    Attributes
    ----------
    area_ids : tuple of str
        Unique ids in lexicographic order (length I).
    dates : tuple of datetime.date
        Strictly consecutive calendar days (length J).
    counts : ndarray, shape (I, J)
        Non-negative observed incident cases.
    populations : ndarray, shape (I,)
        Persons per area, constant over the period.
    n_zero_filled : int
        Number of (area, date) grid cells absent from the source file.
    """

    area_ids: tuple
    dates: tuple
    counts: np.ndarray
    populations: np.ndarray
    n_zero_filled: int = 0

    def __post_init__(self):
        I, J = len(self.area_ids), len(self.dates)
        if len(set(self.area_ids)) != I:
            raise ValueError("area ids are not unique")
        if list(self.area_ids) != sorted(self.area_ids):
            raise ValueError("area ids must be in lexicographic order")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise ValueError(f"dates not consecutive around {a} -> {b}")
        if self.counts.shape != (I, J):
            raise ValueError(f"counts shape {self.counts.shape} != ({I}, {J})")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")
        if self.populations.shape != (I,):
            raise ValueError("populations misaligned with areas")
        if np.any(self.populations <= 0):
            bad = self.area_ids[int(np.argmax(self.populations <= 0))]
            raise ValueError(f"non-positive population for area {bad}")

    @property
    def I(self):
        return len(self.area_ids)

    @property
    def J(self):
        return len(self.dates)

    def area_index(self, area_id):
        try:
            return self.area_ids.index(area_id)
        except ValueError:
            raise KeyError(f"unknown area id {area_id!r}") from None

    def last_window(self, n_days):
        """Dataset restricted to the final ``n_days`` days of the period."""
        if not 1 <= n_days <= self.J:
            raise ValueError(f"window of {n_days} days outside 1..{self.J}")
        return SurveillanceDataset(
            area_ids=self.area_ids,
            dates=self.dates[-n_days:],
            counts=self.counts[:, -n_days:].copy(),
            populations=self.populations,
            n_zero_filled=self.n_zero_filled,
        )


@dataclass(frozen=True)
class RunConfig:
    """Run configuration mirrored by the ``key = value`` config file."""

    knot_spacing_days: int = 14
    chains: int = 5
    iterations_per_chain: int = 5000
    burn_in: int = 2000
    thin: int = 15
    seed: int = 0
    rho_mode: str = "common"
    uniform_sd_upper: float = 10.0
    s_max: int = 25
    si_mean: float = 4.7
    si_sd: float = 2.9

    def __post_init__(self):
        if self.knot_spacing_days <= 0:
            raise ValueError("knot_spacing_days must be positive")
        if self.chains <= 0 or self.iterations_per_chain <= 0:
            raise ValueError("chains and iterations_per_chain must be positive")
        if not 0 <= self.burn_in < self.iterations_per_chain:
            raise ValueError("need 0 <= burn_in < iterations_per_chain")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.rho_mode not in ("common", "per_basis"):
            raise ValueError(f"unknown rho_mode {self.rho_mode!r}")
        if self.uniform_sd_upper <= 0:
            raise ValueError("uniform_sd_upper must be positive")
        if self.s_max < 1:
            raise ValueError("s_max must be >= 1")
        if self.si_mean <= 0 or self.si_sd <= 0:
            raise ValueError("si_mean and si_sd must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit an unsigned 64-bit integer")


_INT_FIELDS = {
    "knot_spacing_days", "chains", "iterations_per_chain",
    "burn_in", "thin", "seed", "s_max",
}


def load_run_config(path):
    """Parse a ``key = value`` config file; absent keys keep their default."""
    values = {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in _INT_FIELDS:
            values[key] = int(val)
        elif key == "rho_mode":
            values[key] = val
        else:
            values[key] = float(val)
    return RunConfig(**values)


def write_run_config(config, path):
    lines = [
        f"{f.name} = {getattr(config, f.name)}"
        for f in dataclasses.fields(RunConfig)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_table(path, required):
    df = pd.read_csv(path, dtype=str, skipinitialspace=True)
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing column(s) {missing}")
    return df


def load_counts(path, area_column="area_id", date_column="date",
                count_column="count"):
    """Read a long-format counts file into a dense area x day matrix.

    Returns ``(area_ids, dates, counts, n_zero_filled)``: the dataset
    fragment before populations are attached. Areas sort lexicographically,
    dates run consecutively from the earliest to the latest observed day;
    grid cells absent from the file become 0 and are counted.
    """
    df = _read_table(path, [area_column, date_column, count_column])
    if len(df) == 0:
        raise ValueError(f"{path}: no data rows")

    parsed_dates = []
    for idx, raw in df[date_column].items():
        try:
            parsed_dates.append(_date.fromisoformat(str(raw).strip()))
        except ValueError:
            raise ValueError(
                f"{path} row {idx + 2}: unparseable date {raw!r}"
            ) from None
    counts_col = []
    for idx, raw in df[count_column].items():
        try:
            value = int(str(raw).strip())
        except ValueError:
            raise ValueError(
                f"{path} row {idx + 2}: unparseable count {raw!r}"
            ) from None
        if value < 0:
            area = df[area_column].iloc[idx]
            raise ValueError(
                f"{path} row {idx + 2}: negative count {value} "
                f"for ({area}, {parsed_dates[idx]})"
            )
        counts_col.append(value)

    areas = [str(a).strip() for a in df[area_column]]
    keys = list(zip(areas, parsed_dates))
    if len(set(keys)) != len(keys):
        seen, dup = set(), None
        for k in keys:
            if k in seen:
                dup = k
                break
            seen.add(k)
        raise ValueError(f"{path}: duplicate row for (area, date) = {dup}")

    area_ids = tuple(sorted(set(areas)))
    d0, d1 = min(parsed_dates), max(parsed_dates)
    dates = tuple(d0 + timedelta(days=k) for k in range((d1 - d0).days + 1))
    a_idx = {a: i for i, a in enumerate(area_ids)}
    counts = np.zeros((len(area_ids), len(dates)), dtype=np.int64)
    for (a, d), v in zip(keys, counts_col):
        counts[a_idx[a], (d - d0).days] = v
    n_zero_filled = counts.size - len(keys)
    if n_zero_filled:
        logger.warning(
            "%s: %d (area, date) cells absent from file, filled with 0",
            path, n_zero_filled,
        )
    return area_ids, dates, counts, n_zero_filled


def load_population(path, area_column="area_id",
                    population_column="population"):
    """Read the per-area population file into an id -> persons mapping."""
    df = _read_table(path, [area_column, population_column])
    out = {}
    for idx, row in df.iterrows():
        area = str(row[area_column]).strip()
        if area in out:
            raise ValueError(f"{path} row {idx + 2}: duplicate area {area!r}")
        try:
            pop = float(row[population_column])
        except ValueError:
            raise ValueError(
                f"{path} row {idx + 2}: unparseable population "
                f"{row[population_column]!r}"
            ) from None
        if pop <= 0:
            raise ValueError(
                f"{path} row {idx + 2}: non-positive population for {area!r}"
            )
        out[area] = pop
    if not out:
        raise ValueError(f"{path}: no data rows")
    return out


def load_dataset(counts_path, population_path, **column_names):
    """Assemble a :class:`SurveillanceDataset` from counts + population files.

    The population file is the area roster: every area in the counts file
    must appear there; roster areas with no reported cases get all-zero
    rows.
    """
    area_ids_counts, dates, counts, n_fill = load_counts(
        counts_path, **column_names
    )
    pops = load_population(population_path)
    unknown = [a for a in area_ids_counts if a not in pops]
    if unknown:
        raise ValueError(
            f"{counts_path}: area(s) {unknown} missing from {population_path}"
        )
    area_ids = tuple(sorted(pops))
    full = np.zeros((len(area_ids), len(dates)), dtype=np.int64)
    extra_rows = 0
    src = {a: i for i, a in enumerate(area_ids_counts)}
    for i, a in enumerate(area_ids):
        if a in src:
            full[i] = counts[src[a]]
        else:
            extra_rows += 1
    if extra_rows:
        logger.warning(
            "%d roster area(s) have no counts rows; filled with 0", extra_rows
        )
        n_fill += extra_rows * len(dates)
    populations = np.array([pops[a] for a in area_ids], dtype=float)
    return SurveillanceDataset(
        area_ids=area_ids,
        dates=dates,
        counts=full,
        populations=populations,
        n_zero_filled=n_fill,
    )


def load_adjacency(path, area_ids, allow_islands=False):
    """Read an undirected edge list keyed by area id.

    Every id must be on the roster; self-loops are rejected. Areas with no
    neighbours make the run refuse to start unless ``allow_islands`` is
    set (the Leroux conditionals stay proper, but an island is usually a
    data error).
    """
    df = _read_table(path, ["area_id_a", "area_id_b"])
    idx = {a: i for i, a in enumerate(area_ids)}
    edges = []
    for row_no, row in df.iterrows():
        a = str(row["area_id_a"]).strip()
        b = str(row["area_id_b"]).strip()
        for name in (a, b):
            if name not in idx:
                raise ValueError(
                    f"{path} row {row_no + 2}: unknown area id {name!r}"
                )
        if a == b:
            raise ValueError(f"{path} row {row_no + 2}: self-loop on {a!r}")
        edges.append((idx[a], idx[b]))
    graph = AdjacencyGraph.from_edges(len(area_ids), edges)
    if graph.has_islands and not allow_islands:
        islands = [area_ids[i] for i in np.flatnonzero(graph.n == 0)]
        raise ValueError(
            f"area(s) with no neighbours: {islands}; "
            "pass --allow-islands to proceed"
        )
    return graph


def write_counts(dataset, path):
    rows = [
        (a, d.isoformat(), int(dataset.counts[i, j]))
        for i, a in enumerate(dataset.area_ids)
        for j, d in enumerate(dataset.dates)
    ]
    pd.DataFrame(rows, columns=["area_id", "date", "count"]).to_csv(
        path, index=False
    )


def write_population(dataset, path):
    pd.DataFrame(
        {"area_id": dataset.area_ids, "population": dataset.populations}
    ).to_csv(path, index=False, float_format=_FLOAT_FMT)


def write_adjacency(graph, area_ids, path):
    rows = [(area_ids[a], area_ids[b]) for a, b in graph.edges]
    pd.DataFrame(rows, columns=["area_id_a", "area_id_b"]).to_csv(
        path, index=False
    )


# ---------------------------------------------------------------------------
# posterior draw dump: scalar parameters as a long-format delimited table,
# the big area-level fields (beta_star, eps) as compressed binary
# ---------------------------------------------------------------------------

def save_draws(draws, out_dir):
    """Persist posterior draws: scalars to CSV, fields to NPZ.

    The CSV has one row per (chain, iteration, parameter, value); the NPZ
    carries ``beta_star`` (chains, kept, I, K) and, when stored, ``eps``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for name, series in draws.scalar_series().items():
        for c in range(draws.n_chains):
            for r, it in enumerate(draws.iterations):
                records.append((c, int(it), name, series[c, r]))
    df = pd.DataFrame(
        records, columns=["chain", "iteration", "parameter", "value"]
    )
    df.to_csv(out_dir / "draws_scalars.csv", index=False,
              float_format=_FLOAT_FMT)
    arrays = {
        "beta_star": draws.beta_star,
        "iterations": np.asarray(draws.iterations, dtype=np.int64),
        "burn_in": np.int64(draws.burn_in),
        "thin": np.int64(draws.thin),
        "rho_mode_per_basis": np.bool_(draws.rho.ndim == 3),
    }
    if draws.eps is not None:
        arrays["eps"] = draws.eps
    np.savez_compressed(out_dir / "draws_fields.npz", **arrays)
    return [out_dir / "draws_scalars.csv", out_dir / "draws_fields.npz"]


def load_draws(run_dir):
    """Rebuild a :class:`~arealrt.model.PosteriorDraws` from a dump."""
    from .model import PosteriorDraws

    run_dir = Path(run_dir)
    csv_path = run_dir / "draws_scalars.csv"
    npz_path = run_dir / "draws_fields.npz"
    if not csv_path.exists() or not npz_path.exists():
        raise FileNotFoundError(f"no draws found in {run_dir}")
    df = pd.read_csv(csv_path, float_precision="round_trip")
    with np.load(npz_path) as npz:
        beta_star = npz["beta_star"]
        eps = npz["eps"] if "eps" in npz.files else None
        iterations = npz["iterations"]
        burn_in = int(npz["burn_in"])
        thin = int(npz["thin"])
        per_basis = bool(npz["rho_mode_per_basis"])
    n_chains, n_kept, I, K = beta_star.shape

    def gather(prefix, count):
        out = np.empty((n_chains, n_kept, count))
        for j in range(count):
            sub = df[df["parameter"] == f"{prefix}{j + 1}"]
            out[:, :, j] = sub["value"].to_numpy().reshape(n_chains, n_kept)
        return out

    gamma = np.zeros((n_chains, n_kept, 7))
    for d in range(2, 8):
        sub = df[df["parameter"] == f"gamma_{d}"]
        gamma[:, :, d - 1] = sub["value"].to_numpy().reshape(n_chains, n_kept)
    mu = gather("mu_", K)
    sigma_beta = gather("sigma_beta_", K)
    sigma_eps = (
        df[df["parameter"] == "sigma_eps"]["value"]
        .to_numpy().reshape(n_chains, n_kept)
    )
    if per_basis:
        rho = gather("rho_", K)
    else:
        rho = (
            df[df["parameter"] == "rho"]["value"]
            .to_numpy().reshape(n_chains, n_kept)
        )
    return PosteriorDraws(
        gamma=gamma, mu=mu, beta_star=beta_star, eps=eps, rho=rho,
        sigma_beta=sigma_beta, sigma_eps=sigma_eps,
        iterations=iterations, burn_in=burn_in, thin=thin,
    )


# ---------------------------------------------------------------------------
# result emission
# ---------------------------------------------------------------------------

def _summaries(values):
    """Pointwise mean and central 95% band over the draw axis (axis 0)."""
    return (
        values.mean(axis=0),
        np.percentile(values, 2.5, axis=0),
        np.percentile(values, 97.5, axis=0),
    )


def emit_results(draws, dataset, config, out_dir, reference_day=None,
                 rate_cuts=None, rt_cuts=None):
    """Write all result tables plus the machine-readable run manifest.

    Produces ``posterior_summary.csv`` (mean, sd, quantiles, R-hat, n_eff
    per scalar parameter), per-(area, day) ``rates.csv`` and ``rt.csv``,
    the per-day ``regional_rt.csv``, ``risk.csv``, ``correlation.csv`` and
    ``manifest.json``. Returns the manifest dictionary.
    """
    from .model import diagnostics
    from .rt import build_infectivity, regional_rt, smoothed_rt
    from .splines import build_basis
    from .surveillance import pattern_correlation, risk_table, smoothed_rate

    if draws.n_kept == 0:
        raise ValueError("no retained draws")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    basis = build_basis(dataset.J, config.knot_spacing_days)
    profile = build_infectivity(config.si_mean, config.si_sd, config.s_max)
    files = []

    diag = diagnostics(draws)
    diag.to_csv(out_dir / "posterior_summary.csv", float_format="%.10g")
    files.append("posterior_summary.csv")

    date_strs = [d.isoformat() for d in dataset.dates]
    rate_mean, rate_lo, rate_hi = _summaries(smoothed_rate(draws, basis))
    rates = pd.DataFrame({
        "area_id": np.repeat(dataset.area_ids, dataset.J),
        "date": np.tile(date_strs, dataset.I),
        "mean": rate_mean.ravel(),
        "lo95": rate_lo.ravel(),
        "hi95": rate_hi.ravel(),
    })
    rates.to_csv(out_dir / "rates.csv", index=False, float_format="%.10g")
    files.append("rates.csv")

    surface = smoothed_rt(draws, basis, profile)
    rt_days = [date_strs[t] for t in surface.day_indices]
    rt_df = pd.DataFrame({
        "area_id": np.repeat(dataset.area_ids, len(rt_days)),
        "date": np.tile(rt_days, dataset.I),
        "mean": surface.mean.ravel(),
        "lo95": surface.lo95.ravel(),
        "hi95": surface.hi95.ravel(),
        "p_gt_1": surface.p_gt_1.ravel(),
    })
    rt_df.to_csv(out_dir / "rt.csv", index=False, float_format="%.10g")
    files.append("rt.csv")

    reg = regional_rt(surface, dataset.populations)
    reg.insert(0, "date", rt_days)
    reg.to_csv(out_dir / "regional_rt.csv", index=False, float_format="%.10g")
    files.append("regional_rt.csv")

    risk = risk_table(
        draws, basis, dataset, profile, reference_day=reference_day,
        rate_cuts=rate_cuts, rt_cuts=rt_cuts,
    )
    risk.to_csv(out_dir / "risk.csv", index=False, float_format="%.10g")
    files.append("risk.csv")

    corr, peak_days = pattern_correlation(draws, basis)
    labels = [f"day_{d}" for d in peak_days]
    pd.DataFrame(corr, index=labels, columns=labels).to_csv(
        out_dir / "correlation.csv", float_format="%.10g"
    )
    files.append("correlation.csv")

    manifest = run_manifest(config, dataset, draws, basis.K, files)
    write_manifest(manifest, out_dir)
    return manifest


def run_manifest(config, dataset, draws, basis_k, files):
    """Machine-readable run metadata; the seed makes reruns bit-identical."""
    return {
        "config": dataclasses.asdict(config),
        "seed": config.seed,
        "dataset": {
            "areas": dataset.I,
            "days": dataset.J,
            "first_date": dataset.dates[0].isoformat(),
            "last_date": dataset.dates[-1].isoformat(),
            "zero_filled_cells": dataset.n_zero_filled,
        },
        "basis": {"K": basis_k,
                  "knot_spacing_days": config.knot_spacing_days},
        "draws": {
            "chains": draws.n_chains,
            "kept_per_chain": draws.n_kept,
        },
        "files": list(files),
    }


def write_manifest(manifest, out_dir):
    (Path(out_dir) / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def read_manifest(run_dir):
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {run_dir}")
    return json.loads(path.read_text())


def declare_files(run_dir, new_files):
    """Append output files to an existing run manifest."""
    manifest = read_manifest(run_dir)
    for name in new_files:
        if name not in manifest["files"]:
            manifest["files"].append(name)
    write_manifest(manifest, run_dir)
    return manifest
