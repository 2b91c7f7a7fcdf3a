"""Experiment orchestration: configuration, replicated seeded runs of the
benchmark protocols at desk scale, scoring, and results persistence."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import combinatorics as comb
from . import metrics
from . import optimizer as opt
from . import reduction
from .errors import ConfigError
from .model import BlockTransform, DispersionChoice, MultiDataset, SubspaceAssignment
from .simgen import SimSpec, build_instance

_SIM_KEYS = {"subspace_dims", "dims_v", "n_obs", "cond_target", "snr_db",
             "rho_max", "family", "copula_draws", "ar_rho", "seed"}
_TOP_KEYS = {"experiment", "sim", "reduce", "solver", "dispersion", "T",
             "optim", "precision_b", "instances", "replicates", "seed",
             "out_dir", "threads"}
_OPTIM_KEYS = {"lower", "upper", "typical_x", "max_fun_evals", "max_iters",
               "lbfgs_memory", "tol_fun", "tol_x"}


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    sim: Optional[SimSpec] = None
    reduce: str = "none"
    solver: str = "misa"
    dispersion: DispersionChoice = DispersionChoice.SCALE_CONTROLLED
    T: int = 2
    optim: opt.OptimOptions = field(default_factory=opt.OptimOptions)
    precision_b: float = 80.0
    instances: int = 1
    replicates: int = 1
    seed: int = 0
    out_dir: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        if self.reduce not in ("none", "pre", "gpca"):
            raise ConfigError(f"unknown reduce mode {self.reduce!r}")
        if self.solver not in ("misa", "misa-gp"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.instances < 1 or self.replicates < 1:
            raise ConfigError("instances and replicates must be >= 1")
        if self.sim is None:
            raise ConfigError("config needs a sim section or a preset experiment id")


def _parse_snr(v):
    if isinstance(v, str):
        if v.lower() in ("inf", "infinity"):
            return np.inf
        raise ConfigError(f"bad snr_db value {v!r}")
    return float(v)


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a validated config from a parsed JSON tree; unknown keys are
    rejected by name at every level."""
    if not isinstance(d, dict):
        raise ConfigError("config root must be an object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    exp_id = d.get("experiment", "custom")
    base = preset(exp_id) if exp_id != "custom" else ExperimentConfig(
        experiment="custom", sim=SimSpec(subspace_dims=[[1]], dims_v=[1], n_obs=2))
    kw = {}
    if "sim" in d:
        s = d["sim"]
        unknown = set(s) - _SIM_KEYS
        if unknown:
            raise ConfigError(f"unknown sim key(s): {sorted(unknown)}")
        s = dict(s)
        if "snr_db" in s:
            s["snr_db"] = _parse_snr(s["snr_db"])
        kw["sim"] = SimSpec(**s)
    elif exp_id == "custom":
        raise ConfigError("custom experiment requires a sim section")
    if "optim" in d:
        o = d["optim"]
        unknown = set(o) - _OPTIM_KEYS
        if unknown:
            raise ConfigError(f"unknown optim key(s): {sorted(unknown)}")
        kw["optim"] = opt.OptimOptions(**o)
    if "dispersion" in d:
        try:
            kw["dispersion"] = DispersionChoice(d["dispersion"])
        except ValueError:
            raise ConfigError(f"unknown dispersion {d['dispersion']!r}") from None
    for key in ("reduce", "solver", "T", "precision_b", "instances",
                "replicates", "seed", "out_dir", "threads"):
        if key in d:
            kw[key] = d[key]
    merged = {**base.__dict__, **kw, "experiment": exp_id}
    return ExperimentConfig(**merged)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def _preset_optim() -> opt.OptimOptions:
    # benchmark runs need a tighter function tolerance than the library default
    return opt.OptimOptions(tol_fun=1e-8, tol_x=1e-9)


def preset(name: str) -> ExperimentConfig:
    """Desk-scale presets mirroring the benchmark protocols."""
    if name == "ica1":
        sim = SimSpec(subspace_dims=np.ones((10, 1), dtype=int), dims_v=[40],
                      n_obs=5000, cond_target=3.0, snr_db=np.inf)
        return ExperimentConfig(experiment=name, optim=_preset_optim(), sim=sim, reduce="pre",
                                solver="misa", instances=10, replicates=10)
    if name == "iva1":
        sim = SimSpec(subspace_dims=np.ones((8, 5), dtype=int), dims_v=[8] * 5,
                      n_obs=20000, cond_target=3.0, snr_db=np.inf, rho_max=0.5)
        return ExperimentConfig(experiment=name, optim=_preset_optim(), sim=sim, reduce="none",
                                solver="misa", instances=1, replicates=10)
    if name == "iva2":
        sim = SimSpec(subspace_dims=np.ones((12, 2), dtype=int), dims_v=[20, 20],
                      n_obs=10000, cond_target=3.0, snr_db=15.0, rho_max=0.7,
                      family="copula")
        return ExperimentConfig(experiment=name, optim=_preset_optim(), sim=sim, reduce="pre",
                                solver="misa", instances=1, replicates=10)
    if name == "isa1":
        sim = SimSpec(subspace_dims=np.full((4, 1), 4, dtype=int), dims_v=[16],
                      n_obs=8000, cond_target=3.0, snr_db=np.inf, rho_max=0.5)
        return ExperimentConfig(experiment=name, optim=_preset_optim(), sim=sim, reduce="none",
                                solver="misa-gp", instances=1, replicates=10)
    if name == "isa2":
        sim = SimSpec(subspace_dims=np.array([[1], [2], [3], [4], [5]]),
                      dims_v=[15], n_obs=8000, cond_target=3.0, snr_db=np.inf,
                      rho_max=0.5)
        return ExperimentConfig(experiment=name, optim=_preset_optim(), sim=sim, reduce="none",
                                solver="misa-gp", instances=1, replicates=10)
    if name == "isa3":
        sim = SimSpec(subspace_dims=np.array([[2, 1], [2, 1], [1, 3]]),
                      dims_v=[5, 5], n_obs=8000, cond_target=3.0, snr_db=np.inf,
                      rho_max=0.5)
        return ExperimentConfig(experiment=name, optim=_preset_optim(), sim=sim, reduce="none",
                                solver="misa-gp", instances=1, replicates=10)
    raise ConfigError(f"unknown experiment preset {name!r}")


@dataclass
class RunRecord:
    instance: int
    replicate: int
    instance_seed: int
    replicate_seed: int
    misi: float
    mmse: float
    objective: float
    iterations: int
    wall_time: float
    status: str


def correlation_summary(Y_hat: np.ndarray, Y_true: np.ndarray,
                        P: SubspaceAssignment) -> np.ndarray:
    """K x K summary of |correlation| between estimated and true subspace
    sources, averaged over datasets (and over source pairs where a subspace
    holds several sources in one dataset)."""
    K = P.n_subspaces
    R = np.zeros((K, K))
    M = len(P.col_dims)
    off = P.col_offsets
    for i in range(K):
        for j in range(K):
            vals = []
            for m in range(M):
                ei = P.sources(i)
                ei = ei[(ei >= off[m]) & (ei < off[m + 1])]
                tj = P.sources(j)
                tj = tj[(tj >= off[m]) & (tj < off[m + 1])]
                if len(ei) == 0 or len(tj) == 0:
                    continue
                pair = []
                for a in ei:
                    for b in tj:
                        c = np.corrcoef(Y_hat[a], Y_true[b])[0, 1]
                        pair.append(abs(c))
                vals.append(float(np.mean(pair)))
            R[i, j] = float(np.mean(vals)) if vals else 0.0
    return R


def _mmse_applicable(P: SubspaceAssignment) -> bool:
    # reliable only when every subspace holds at most one source per dataset
    return bool(np.all(P.per_dataset_dims() <= 1))


def _run_replicate(cfg: ExperimentConfig, work_data: MultiDataset,
                   data: MultiDataset, P: SubspaceAssignment, truth,
                   B: Optional[BlockTransform], i: int, r: int,
                   inst_seed: int, rep_seed: int) -> RunRecord:
    rng = np.random.default_rng(rep_seed)
    W0 = BlockTransform([opt.random_row_orthonormal(P.col_dims[m], Vm, rng)
                         for m, Vm in enumerate(work_data.dims)])
    t0 = time.perf_counter()
    try:
        if cfg.solver == "misa":
            sol = comb.run_misa(work_data, P, W0, dispersion=cfg.dispersion,
                                opts=cfg.optim)
        elif work_data.n_datasets == 1:
            sol = comb.misa_gp_sdm(work_data, P, W0, T=cfg.T, opts=cfg.optim)
        else:
            sol = comb.misa_gp_mdm(work_data, P, W0, T=cfg.T, opts=cfg.optim)
        if B is not None:
            W_total = BlockTransform([Wm @ Bm for Wm, Bm in
                                      zip(sol.W_final.blocks, B.blocks)])
        else:
            W_total = sol.W_final
        misi_val = metrics.misi(W_total, truth.A, P)
        if _mmse_applicable(P):
            Y_hat = W_total.transform(data)
            mmse_val = metrics.mmse(correlation_summary(Y_hat, truth.Y, P))
        else:
            mmse_val = float("nan")
        return RunRecord(instance=i, replicate=r, instance_seed=inst_seed,
                         replicate_seed=rep_seed, misi=misi_val, mmse=mmse_val,
                         objective=sol.objective_value, iterations=sol.n_iters,
                         wall_time=time.perf_counter() - t0,
                         status=sol.status.value)
    except Exception as e:  # a failed run is recorded, not fatal
        return RunRecord(instance=i, replicate=r, instance_seed=inst_seed,
                         replicate_seed=rep_seed, misi=float("nan"),
                         mmse=float("nan"), objective=float("nan"),
                         iterations=0, wall_time=time.perf_counter() - t0,
                         status=f"error:{type(e).__name__}")


def run_experiment(cfg: ExperimentConfig):
    """Run the full grid; returns (records, summary) and persists them when
    cfg.out_dir is set."""
    root = np.random.SeedSequence(cfg.seed)
    inst_seqs = root.spawn(cfg.instances)
    records: List[RunRecord] = []
    for i in range(cfg.instances):
        inst_seed = int(inst_seqs[i].generate_state(1)[0])
        sim = replace(cfg.sim, seed=inst_seed)
        data, truth, P = build_instance(sim)

        B = None
        work_data = data
        if cfg.reduce == "pre":
            red = reduction.reduce_data(data, P.col_dims, options=cfg.optim,
                                        seed=inst_seed + 1,
                                        precision_b=cfg.precision_b)
            B = red.B_star
            work_data = red.reduced
        elif cfg.reduce == "gpca":
            if len(set(P.col_dims)) != 1:
                raise ConfigError("gpca reduction requires equal C_m across datasets")
            Bt = reduction.gpca_init(data, P.col_dims[0])
            B = Bt
            work_data = MultiDataset([Bm @ Xm for Bm, Xm in
                                      zip(Bt.blocks, data.blocks)])

        rep_seqs = inst_seqs[i].spawn(cfg.replicates)
        rep_seeds = [int(s.generate_state(1)[0]) for s in rep_seqs]
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
                futs = [ex.submit(_run_replicate, cfg, work_data, data, P,
                                  truth, B, i, r, inst_seed, rep_seeds[r])
                        for r in range(cfg.replicates)]
                records.extend(f.result() for f in futs)
        else:
            for r in range(cfg.replicates):
                records.append(_run_replicate(cfg, work_data, data, P, truth,
                                              B, i, r, inst_seed, rep_seeds[r]))

    summary = summarize(cfg, records)
    if cfg.out_dir:
        write_results(cfg.out_dir, records, summary)
    return records, summary


def summarize(cfg: ExperimentConfig, records: List[RunRecord]) -> dict:
    """Median over instances of the best (minimum) MISI across replicates."""
    best = []
    for i in range(cfg.instances):
        vals = [r.misi for r in records if r.instance == i and np.isfinite(r.misi)]
        best.append(float(np.min(vals)) if vals else float("nan"))
    finite = [b for b in best if np.isfinite(b)]
    med = float(np.median(finite)) if finite else float("nan")
    return {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "instances": cfg.instances,
        "replicates": cfg.replicates,
        "best_misi_per_instance": best,
        "median_best_misi": med,
        "good": bool(np.isfinite(med) and med < metrics.MISI_GOOD),
        "excellent": bool(np.isfinite(med) and med < metrics.MISI_EXCELLENT),
    }


_RECORD_FIELDS = ["instance", "replicate", "instance_seed", "replicate_seed",
                  "misi", "mmse", "objective", "iterations", "status"]


def write_results(out_dir, records: List[RunRecord], summary: dict) -> None:
    """Persist records.csv and summary.json (deterministic given the run) and
    timings.csv (wall-clock, inherently non-deterministic)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_RECORD_FIELDS)
        for r in records:
            w.writerow([r.instance, r.replicate, r.instance_seed,
                        r.replicate_seed, repr(r.misi), repr(r.mmse),
                        repr(r.objective), r.iterations, r.status])
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "replicate", "wall_time"])
        for r in records:
            w.writerow([r.instance, r.replicate, repr(r.wall_time)])
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
