"""Experiment configuration, seeding, scheduling and the append-only result store."""

import concurrent.futures as cf
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .graph import grow_random_region, make_instance, subseed

log = logging.getLogger(__name__)

KINDS = ("ed_scan", "pimc_qea", "pimc_correlations", "renyi_scan", "cavity_scan", "meanfield_scan",
         "analyze")
WORKERS_ENV = "BETHE_QSG_WORKERS"
STORE_NAME = "results.csv"
RENYI_RUNS_NAME = "renyi_runs.csv"
META_NAME = "experiments.json"
STORE_COLUMNS = ("experiment_id", "kind", "n", "realization", "instance_seed", "gamma", "beta",
                 "m_slices", "h", "chain_id", "observable", "value", "stderr", "error")
RENYI_RUN_COLUMNS = ("instance_seed", "region_seed", "gamma", "beta", "m_slices", "h", "chain_id",
                     "n_connected", "n_disconnected", "s2", "stderr")
POOLED = -1  # chain_id of rows combining all chains


class ConfigInvalid(ValueError):
    pass


class IoFailure(OSError):
    pass


class MissingData(KeyError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    sizes: tuple = (8,)
    gammas: tuple = ()
    beta: float = 15.0
    m_slices: int = 150
    h: float = 0.05
    realizations: int = 50
    chains: int = 10
    sweeps: int = 10_000
    thermalization_sweeps: int = None
    master_seed: int = 0
    degree: int = 3
    j: float = 1.0
    region_fraction: float = 0.5
    temperatures: tuple = ()  # cavity_scan
    population_size: int = 100_000  # cavity_scan
    inputs: tuple = ()  # analyze: store directories
    recipes: tuple = ()  # analyze: figure recipes
    out_dir: str = "runs"

    def __post_init__(self):
        for name in ("sizes", "gammas", "temperatures", "inputs", "recipes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigInvalid(f"unknown experiment kind {self.kind!r}")
        if self.kind in ("ed_scan", "pimc_qea", "pimc_correlations", "renyi_scan") and not self.gammas:
            raise ConfigInvalid("gamma grid is empty")
        if any(g <= 0 for g in self.gammas) and self.kind != "ed_scan":
            raise ConfigInvalid("QMC requires gamma > 0")
        if self.kind == "cavity_scan" and not self.temperatures:
            raise ConfigInvalid("temperature grid is empty")
        if self.kind == "analyze" and not (self.inputs and self.recipes):
            raise ConfigInvalid("analyze needs input stores and recipes")
        if self.kind not in ("cavity_scan", "analyze"):
            if not self.sizes or any(n < 2 for n in self.sizes):
                raise ConfigInvalid("sizes must be a non-empty list of integers >= 2")
            if self.realizations < 1:
                raise ConfigInvalid("realizations must be positive")
        if self.kind in ("pimc_qea", "pimc_correlations", "renyi_scan"):
            if self.beta <= 0 or self.m_slices < 2 or self.chains < 1 or self.sweeps < 2:
                raise ConfigInvalid("beta > 0, m_slices >= 2, chains >= 1 and sweeps >= 2 required")
        if not 0 < self.region_fraction < 1:
            raise ConfigInvalid("region_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigInvalid(f"unknown config fields {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigInvalid("config needs a 'kind'")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigInvalid(str(e)) from e

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"{path}: {e}") from e

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def experiment_id(self):
        """Hash of every field that affects results (not the output location)."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def instance_seed(master_seed, realization):
    return subseed(master_seed, realization)


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class ResultStore:
    """Append-only CSV of result rows; rows of one task are written together."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.path = self.directory / STORE_NAME
        self.renyi_path = self.directory / RENYI_RUNS_NAME
        self.meta_path = self.directory / META_NAME

    def _ensure(self, path, columns):
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            if not path.exists():
                with open(path, "w", newline="") as f:
                    csv.writer(f).writerow(columns)
        except OSError as e:
            raise IoFailure(f"cannot write {path}: {e}") from e

    def register(self, config):
        self._ensure(self.path, STORE_COLUMNS)
        meta = self.experiments()
        meta.setdefault(config.experiment_id, config.to_dict())
        with open(self.meta_path, "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)

    def experiments(self):
        if not self.meta_path.exists():
            return {}
        with open(self.meta_path) as f:
            return json.load(f)

    def append(self, rows, renyi_rows=()):
        try:
            if renyi_rows:
                self._ensure(self.renyi_path, RENYI_RUN_COLUMNS)
                with open(self.renyi_path, "a", newline="") as f:
                    csv.writer(f).writerows([[_fmt(v) for v in r] for r in renyi_rows])
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerows([[_fmt(v) for v in r] for r in rows])
                f.flush()
                os.fsync(f.fileno())
        except OSError as e:
            raise IoFailure(f"cannot append to {self.path}: {e}") from e

    def rows(self, experiment_id=None):
        if not self.path.exists():
            return []
        with open(self.path, newline="") as f:
            out = list(csv.DictReader(f))
        if experiment_id is not None:
            out = [r for r in out if r["experiment_id"] == experiment_id]
        return out

    def completed(self, experiment_id):
        return {task_key_of_row(r) for r in self.rows(experiment_id)}

    def ensemble(self, observable=None, kind=None, chain_id=POOLED):
        """DisorderEnsemble of pooled rows, controls = (kind, n, gamma, beta, m_slices, h)."""
        ens = analysis.DisorderEnsemble()
        for r in self.rows():
            if r["error"] or int(r["chain_id"]) != chain_id:
                continue
            if (observable and r["observable"] != observable) or (kind and r["kind"] != kind):
                continue
            controls = {"kind": r["kind"], "n": int(r["n"]), "gamma": _float(r["gamma"]),
                        "beta": _float(r["beta"]), "m_slices": int(r["m_slices"] or 0),
                        "h": _float(r["h"])}
            ens.add(int(r["instance_seed"]), controls, r["observable"], float(r["value"]),
                    _float(r["stderr"]))
        return ens


def _float(s):
    return float(s) if s != "" else float("nan")


def task_key_of_row(row):
    return (int(row["n"]), int(row["realization"]), row["gamma"], row["beta"])


def _tasks(config):
    if config.kind == "cavity_scan":
        return [(0, 0, None, 1 / t) for t in config.temperatures]
    if config.kind == "meanfield_scan":
        return [(n, r, None, None) for n in config.sizes for r in range(config.realizations)]
    return [(n, r, g, config.beta) for n in config.sizes for r in range(config.realizations)
            for g in config.gammas]


def _task_key(task):
    n, r, g, beta = task
    return (n, r, _fmt(g), _fmt(beta))


def _row(config, task, chain_id, observable, value, stderr=None, error=""):
    n, r, g, beta = task
    qmc = config.kind in ("pimc_qea", "pimc_correlations", "renyi_scan")
    seed = instance_seed(config.master_seed, r) if config.kind != "cavity_scan" else config.master_seed
    return (config.experiment_id, config.kind, n, r, seed, g, beta,
            config.m_slices if qmc else None, config.h if config.kind != "cavity_scan" else None,
            chain_id, observable, value, stderr, error)


def _pimc_params(config, gamma, seed):
    from .pimc import PimcParams

    return PimcParams(beta=config.beta, m_slices=config.m_slices, gamma=gamma, h=config.h,
                      sweeps=config.sweeps, thermalization_sweeps=config.thermalization_sweeps,
                      n_chains=config.chains, seed=seed)


def _run_ed(config, task, inst, seed):
    from . import exact

    n, _, g, _ = task
    gs = exact.lanczos_ground_state(exact.HamiltonianSpec(inst, g, config.h))
    region = grow_random_region(inst.graph, max(1, int(n * config.region_fraction)), seed)
    rho = exact.reduced_density_matrix(gs.amplitudes, region)
    qea, corr = exact.ed_observables(gs.amplitudes)
    fx, fy, fz, fbar = exact.quantum_fisher_information(gs.amplitudes)
    values = {"energy": gs.energy, "s2": exact.renyi_entropy(rho, 2), "qea": qea,
              "qfi_y": fy, "qfi_bar": fbar, "corr_sum": float(np.sum(np.triu(corr, 1)))}
    return [_row(config, task, POOLED, k, v) for k, v in values.items()], []


def _run_pimc(config, task, inst, seed):
    from . import pimc

    n, _, g, _ = task
    corr = config.kind == "pimc_correlations"
    res = pimc.run_pimc(inst, _pimc_params(config, g, seed), correlations=corr)
    mags = np.array([c.mag for c in res.chains])
    q = pimc.measure_qea(mags)
    rows = [_row(config, task, c.chain_id, "qea", float(np.mean(c.mag**2))) for c in res.chains]
    rows.append(_row(config, task, POOLED, "qea", q.q_ea, q.q_ea_err))
    rows.append(_row(config, task, POOLED, "qea_overlap", q.q_overlap, q.q_overlap_err))
    sx = np.array([c.sigma_x.mean() for c in res.chains])
    rows.append(_row(config, task, POOLED, "sigma_x", sx.mean(),
                     sx.std(ddof=1) / np.sqrt(len(sx)) if len(sx) > 1 else None))
    if corr:
        center = int(np.random.default_rng(subseed(seed, 3)).integers(n))
        est = pimc.measure_correlations(res, inst.graph, center)
        for r in sorted(est.c_mean):
            rows.append(_row(config, task, POOLED, f"c_mean_r{r}", est.c_mean[r]))
            rows.append(_row(config, task, POOLED, f"c_max_r{r}", est.c_max[r]))
    return rows, []


def _run_renyi(config, task, inst, seed):
    from . import renyi_replica

    n, _, g, _ = task
    region = grow_random_region(inst.graph, max(1, int(n * config.region_fraction)), seed)
    params = _pimc_params(config, g, seed)
    chains = [renyi_replica.run_replica_chain(inst, region, params, c) for c in range(config.chains)]
    rows, runs = [], []
    for c in chains:
        rows.append(_row(config, task, c.chain_id, "s2", c.s2, c.stderr))
        runs.append((seed, seed, g, config.beta, config.m_slices, config.h, c.chain_id,
                     c.n_connected, c.n_disconnected, c.s2, c.stderr))
    est = renyi_replica.combine_chains(chains)
    rows.append(_row(config, task, POOLED, "s2", est.s2, est.stderr))
    rows.append(_row(config, task, POOLED, "s2_pooled", est.s2_pooled))
    return rows, runs


def _run_cavity(config, task):
    from . import cavity

    beta = task[3]
    rate = cavity.variance_growth_rate(beta, config.degree - 1, config.j, config.population_size,
                                       seed=config.master_seed)
    return [_row(config, task, POOLED, "variance_multiplier", rate),
            _row(config, task, POOLED, "stable", float(rate < 1))], []


def _run_meanfield(config, task, inst):
    from . import meanfield

    e0 = meanfield.extremal_energy(meanfield.HoppingModel.from_instance(inst))
    return [_row(config, task, POOLED, "e0", e0),
            _row(config, task, POOLED, "gamma_c_first_order", meanfield.gamma_c_first_order(e0))], []


def execute_task(config, task):
    """All rows of one task; module errors become a single error row."""
    n, r = task[0], task[1]
    seed = instance_seed(config.master_seed, r)
    try:
        if config.kind == "cavity_scan":
            return _run_cavity(config, task)
        inst = make_instance(n, config.degree, seed, config.j)
        if config.kind == "meanfield_scan":
            return _run_meanfield(config, task, inst)
        if config.kind == "ed_scan":
            return _run_ed(config, task, inst, seed)
        if config.kind == "renyi_scan":
            return _run_renyi(config, task, inst, seed)
        return _run_pimc(config, task, inst, seed)
    except Exception as e:  # recorded, never aborts the ensemble
        log.warning("task %s failed: %s", task, e)
        return [_row(config, task, POOLED, "error", None, None, f"{type(e).__name__}: {e}")], []


def _execute_packed(config_dict, task):
    return execute_task(ExperimentConfig.from_dict(config_dict), task)


def resolve_workers(workers=None):
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as e:
            raise ConfigInvalid(f"{WORKERS_ENV}={env!r} is not an integer") from e
    return max(1, int(workers or 1))


def run_experiment(config, workers=None, resume=True, progress=None):
    """Run every task of `config` not yet in the store; returns the number of new tasks.

    Rows are appended in task order (results finishing early wait for their
    predecessors), so the store is identical for any worker count, and an
    interrupted run resumes by skipping completed task keys.
    """
    if config.kind == "analyze":
        analyze(config)
        return 0
    store = ResultStore(config.out_dir)
    done = store.completed(config.experiment_id)
    if done and not resume:
        raise ConfigInvalid(f"{store.path} already holds rows of experiment {config.experiment_id}; "
                            "resume to complete it")
    store.register(config)
    todo = [t for t in _tasks(config) if _task_key(t) not in done]
    n_workers = resolve_workers(workers)
    log.info("experiment %s: %d tasks, %d done, %d workers", config.experiment_id,
             len(todo) + len(done), len(done), n_workers)
    if n_workers == 1:
        for i, t in enumerate(todo):
            store.append(*execute_task(config, t))
            if progress:
                progress(i + 1, len(todo))
        return len(todo)
    with cf.ProcessPoolExecutor(n_workers) as pool:
        futures = [pool.submit(_execute_packed, config.to_dict(), t) for t in todo]
        for i, fut in enumerate(futures):
            store.append(*fut.result())
            if progress:
                progress(i + 1, len(todo))
    return len(todo)


# ----------------------------------------------------------------- plot data

RECIPES = {
    # recipe: (kind, observable, value column names)
    "renyi_scan": ("renyi_scan", "s2", ("s2_mean", "s2_err")),
    "qea": ("pimc_qea", "qea", ("qea_mean", "qea_err")),
    "ed_s2": ("ed_scan", "s2", ("s2_mean", "s2_err")),
    "ed_qfi": ("ed_scan", "qfi_bar", ("qfi_bar_mean", "qfi_bar_err")),
    "meanfield": ("meanfield_scan", "e0", ("e0_mean", "e0_err")),
}


def disorder_table(store, kind, observable):
    """{(n, gamma): Average} over realizations of pooled rows."""
    ens = store.ensemble(observable, kind)
    groups = {}
    for r in ens.records:
        groups.setdefault((r.controls["n"], r.controls["gamma"]), []).append(r)
    out = {}
    for key, recs in sorted(groups.items()):
        try:
            out[key] = analysis.disorder_average(ens, recs)
        except analysis.InsufficientRealizations:
            log.warning("%s %s: fewer than two realizations, skipped", observable, key)
    return out


def emit_plot_data(store, recipe, out_dir, fraction=0.1):
    """Tidy CSV for one figure (plus fit overlays and reports); returns the written paths."""
    if recipe not in RECIPES:
        raise ConfigInvalid(f"unknown recipe {recipe!r}; choose from {sorted(RECIPES)}")
    kind, observable, (mean_col, err_col) = RECIPES[recipe]
    table = disorder_table(store, kind, observable)
    if not table:
        raise MissingData(f"no {observable!r} rows of kind {kind!r} in {store.path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{recipe}.csv"
    x_name = "n" if kind == "meanfield_scan" else "gamma"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if x_name == "gamma":
            w.writerow(("series", "gamma", mean_col, err_col, "n"))
        else:
            w.writerow(("series", "n", mean_col, err_col, "count"))
        for (n, g), avg in table.items():
            if x_name == "gamma":
                w.writerow((f"N={n}", repr(g), repr(avg.mean), repr(avg.stderr), avg.n))
            else:
                w.writerow((f"N={n}", n, repr(avg.mean), repr(avg.stderr), avg.n))
    paths = [path]
    if recipe in ("renyi_scan", "ed_s2", "ed_qfi"):
        paths += _peak_fits(table, recipe, out_dir, fraction)
    return paths


def _peak_fits(table, recipe, out_dir, fraction):
    sizes = sorted({n for n, _ in table})
    fits, overlay = {}, []
    for n in sizes:
        pts = sorted((g, a.mean, a.stderr) for (m, g), a in table.items() if m == n)
        g, y, e = (np.array(v) for v in zip(*pts))
        errs = e if np.all(e > 0) else None
        try:
            fit = analysis.parabola_peak(g, y, errs, fraction=fraction)
        except (analysis.NoInteriorMaximum, ValueError) as err:
            log.warning("%s N=%d: %s", recipe, n, err)
            continue
        fits[n] = fit
        grid = np.linspace(*fit.window, 50)
        overlay += [(f"N={n}", x, v) for x, v in zip(grid, analysis.sample_fitted_curve("parabola", fit, grid))]
    paths = []
    if overlay:
        p = out_dir / f"{recipe}_parabola.csv"
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("series", "x", "y"))
            w.writerows([(s, repr(float(x)), repr(float(y))) for s, x, y in overlay])
        paths.append(p)
    report = {f"N={n}": f.to_dict() for n, f in fits.items()}
    if len(fits) >= 3:
        ns = np.array(sorted(fits))
        x0 = np.array([fits[n]["x0"] for n in ns])
        err = np.array([fits[n].errors["x0"] for n in ns])
        ext = analysis.one_over_n_extrapolation(ns, x0, err if np.all(err > 0) else None)
        report["one_over_n"] = ext.to_dict()
        p = out_dir / f"{recipe}_gamma_c.csv"
        analysis.write_curve_csv(p, ns, x0, err, series="vertex")
        paths.append(p)
    p = out_dir / f"{recipe}_fits.json"
    with open(p, "w") as f:
        json.dump(report, f, indent=2, default=float)
    paths.append(p)
    return paths


def analyze(config):
    out = Path(config.out_dir)
    written = []
    for d in config.inputs:
        store = ResultStore(d)
        for recipe in config.recipes:
            try:
                written += emit_plot_data(store, recipe, out / Path(d).name)
            except MissingData as e:
                log.warning("%s", e)
    return written
