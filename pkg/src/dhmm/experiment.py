"""Experiment configuration and orchestration behind the command line.

Artifacts are plain JSON and CSV. Nothing time-dependent is written, so
rerunning a config reproduces the output directory byte for byte.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import dfilter, hmm, stability
from .errors import AssumptionError, ParameterError
from .graph import GraphTopology, sample_connected_rgg, sample_connected_rgg_rng
from .mixing import build_mixing, eps_star, lambda2, mixing_time, rho_star, slem, spectrum_report
from .seeding import parse_range

OUTPUT_ENV = "DHMM_OUTPUT_ROOT"

PRESET_DEFAULTS = {
    "asilomar-v": {"S": 60, "r": 0.2, "topology_seed": 1, "T": 20, "n": 250},
    "small": {"S": 8, "r": 0.5, "topology_seed": 0, "T": 10, "n": 60, "normalize": True},
}


@dataclass
class ExperimentConfig:
    model: str = "asilomar-v"          # preset name or path to a model file
    S: int | None = None
    r: float | None = None
    topology_seed: int | None = None   # None: each run seed also draws the topology
    graph_file: str | None = None
    construction: str = "max-degree"
    eps: float | None = None           # None: optimal eps
    T: int | None = None
    n: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    output: str | None = None
    keep_traces: bool = False
    workers: int = 1
    normalize: bool | None = None
    sensors_shown: int = 3             # sensors sampled per run for the sup statistic
    # stability
    C: float = 1.0
    beta: float | None = None          # None: calibrate
    calibration_seeds: list[int] = field(default_factory=lambda: list(range(10000, 12000)))
    eps_acc: float = 0.01
    eps_post: float = 1.0
    ms: list[float] = field(default_factory=lambda: [0.0, 2.0])

    def __post_init__(self):
        defaults = PRESET_DEFAULTS.get(self.model, {})
        for key, value in defaults.items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        if self.normalize is None:
            self.normalize = False
        if isinstance(self.seeds, str):
            self.seeds = parse_range(self.seeds)
        if isinstance(self.calibration_seeds, str):
            self.calibration_seeds = parse_range(self.calibration_seeds)
        self.validate()

    def validate(self) -> None:
        if self.graph_file is None and (self.S is None or self.r is None):
            raise ParameterError("topology needs S and r, or a graph file")
        if self.graph_file is not None and not Path(self.graph_file).exists():
            raise ParameterError(f"graph file not found: {self.graph_file}")
        if self.model not in hmm.PRESETS and not Path(self.model).exists():
            raise ParameterError(f"model {self.model!r} is neither a preset nor an existing file")
        if self.T is None or self.T < 0:
            raise ParameterError(f"T must be >= 0, got {self.T}")
        if self.n is not None and self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        if self.eps is not None and not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if not self.seeds:
            raise ParameterError("at least one seed is required")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def output_dir(self) -> Path:
        if self.output:
            return Path(self.output)
        return Path(os.environ.get(OUTPUT_ENV, "dhmm-out"))


def load_config_file(path: str | os.PathLike) -> dict:
    text = Path(path).read_text()
    doc = yaml.safe_load(text)  # JSON is a subset of YAML
    if not isinstance(doc, dict):
        raise ParameterError(f"config {path} must hold a mapping")
    return doc


def load_model(cfg: ExperimentConfig) -> hmm.HmmModel:
    if cfg.model in hmm.PRESETS:
        model = hmm.preset(cfg.model, cfg.S)
    else:
        model = hmm.model_from_dict(load_config_file(cfg.model))
    if cfg.normalize:
        model = model.normalized()
    model.check_assumptions()
    return model


def load_topology(cfg: ExperimentConfig, seed: int) -> GraphTopology:
    if cfg.graph_file is not None:
        return GraphTopology.load(cfg.graph_file)
    topo_seed = seed if cfg.topology_seed is None else cfg.topology_seed
    return sample_connected_rgg(cfg.S, cfg.r, topo_seed)


def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def run_seed(cfg: ExperimentConfig, seed: int, model: hmm.HmmModel | None = None) -> dict:
    """Simulate one seed and return its artifacts in memory."""
    model = load_model(cfg) if model is None else model
    g = load_topology(cfg, seed)
    w = build_mixing(g, cfg.construction)
    lam2 = lambda2(w)
    eps = eps_star(lam2) if cfg.eps is None else cfg.eps
    run = hmm.simulate(model, cfg.T, seed)
    central = hmm.run_centralized(model, run)
    dist = dfilter.run_distributed(model, run, w, eps, cfg.n, keep_traces=cfg.keep_traces)
    dis = dfilter.l1_disagreement(central, dist)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E45]))
    shown = sorted(int(k) for k in rng.choice(model.S, size=min(cfg.sensors_shown, model.S), replace=False))
    c_mmse, d_mmse = dfilter.mmse_traces(model, central, dist)
    mmse_rows = []
    for t in range(cfg.T + 1):
        row = {"t": t, "state": _fmt(model.states[run.states[t + 1]]), "centralized": _fmt(c_mmse[t])}
        for k in shown:
            row[f"sensor_{k}"] = _fmt(d_mmse[t, k])
        mmse_rows.append(row)
    dis_rows = [{"t": r["t"], "k": r["k"], "posterior_l1": _fmt(r["posterior_l1"]),
                 "log_unnormalized_l1": _fmt(r["log_unnormalized_l1"])} for r in dis.rows()]
    trace_rows = []
    if dist.consensus_errors is not None:
        errs = dist.consensus_errors
        db20, db10 = dfilter.to_db(errs), dfilter.to_db(errs, power=True)
        for t in range(errs.shape[1]):
            for j in range(errs.shape[2]):
                for i in range(errs.shape[0]):
                    trace_rows.append({"t": t, "j": j, "n": i + 1, "l2_error": _fmt(errs[i, t, j]),
                                       "db20": _fmt(db20[i, t, j]), "db10": _fmt(db10[i, t, j])})
    summary = {
        "seed": seed,
        "lambda2": lam2,
        "eps": eps,
        "rho": slem(eps, lam2),
        "sensors_shown": shown,
        "sup_disagreement": float(dis.posterior.max()),
        "sup_disagreement_shown": dis.sup(shown),
        "log_sup_unnormalized": float(dis.log_unnormalized.max()),
        "event_sup_energy": float(stability.observation_energies(run.observations).max()),
    }
    return {"summary": summary, "topology": g.to_dict(), "disagreement": dis_rows, "mmse": mmse_rows,
            "traces": trace_rows}


def _run_seed_job(args):
    cfg_dict, seed = args
    return run_seed(ExperimentConfig.from_dict(cfg_dict), seed)


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_experiment(cfg: ExperimentConfig) -> Path:
    out = cfg.output_dir
    model = load_model(cfg)
    write_json(out / "config.json", cfg.to_dict())
    write_json(out / "model.json", hmm.model_to_dict(model))
    if cfg.topology_seed is not None or cfg.graph_file is not None:
        g = load_topology(cfg, cfg.seeds[0])
        write_json(out / "topology.json", g.to_dict())
        write_json(out / "spectrum.json", spectrum_report(build_mixing(g, cfg.construction), cfg.eps).to_dict())
    results = _map(_run_seed_job, [(cfg.to_dict(), s) for s in cfg.seeds], cfg.workers)
    per_seed = []
    for res in results:
        s = res["summary"]
        d = out / f"seed_{s['seed']}"
        write_json(d / "run.json", s)
        if cfg.topology_seed is None and cfg.graph_file is None:
            write_json(d / "topology.json", res["topology"])
        write_csv(d / "disagreement.csv", res["disagreement"])
        write_csv(d / "mmse.csv", res["mmse"])
        if res["traces"]:
            write_csv(d / "consensus_traces.csv", res["traces"])
        per_seed.append(s)
    write_json(out / "summary.json", summarize(cfg, model, per_seed))
    return out


def summarize(cfg: ExperimentConfig, model: hmm.HmmModel, per_seed: list[dict]) -> dict:
    sups = [s["sup_disagreement"] for s in per_seed]
    summary = {
        "model": model.name,
        "n": cfg.n,
        "T": cfg.T,
        "seeds": [s["seed"] for s in per_seed],
        "sup_disagreement": {str(s["seed"]): s["sup_disagreement"] for s in per_seed},
        "sup_disagreement_shown": {str(s["seed"]): s["sup_disagreement_shown"] for s in per_seed},
        "max_sup_disagreement": max(sups),
        "median_sup_disagreement": float(np.median(sups)),
    }
    if cfg.beta is not None:
        env = stability.energy_envelope(cfg.beta, cfg.C, model.N, cfg.T)
        holds = [s["event_sup_energy"] < env for s in per_seed]
        summary["event"] = {"beta": cfg.beta, "C": cfg.C, "rate": float(np.mean(holds)),
                            "floor": stability.probability_floor(cfg.C, model.N, cfg.T)}
    return summary


def load_summary(out: Path) -> dict:
    """Read back a run directory and cross-check the summary against the tables."""
    summary = json.loads((Path(out) / "summary.json").read_text())
    for seed in summary["seeds"]:
        with open(Path(out) / f"seed_{seed}" / "disagreement.csv") as fh:
            table_max = max(float(r["posterior_l1"]) for r in csv.DictReader(fh))
        if table_max != summary["sup_disagreement"][str(seed)]:
            raise ParameterError(f"summary disagrees with the table for seed {seed}")
    return summary


def stability_constants(cfg: ExperimentConfig, model: hmm.HmmModel | None = None):
    model = load_model(cfg) if model is None else model
    g = load_topology(cfg, cfg.seeds[0])
    w = build_mixing(g, cfg.construction)
    report = spectrum_report(w)
    calibration = None
    beta = cfg.beta
    if beta is None:
        calibration = stability.calibrate_beta(model, cfg.T, cfg.C, cfg.calibration_seeds)
        beta = calibration["beta"]
    k = stability.make_constants(model, report, cfg.C, beta, cfg.T)
    return model, w, k, calibration


def required_n(cfg: ExperimentConfig) -> dict:
    model, w, k, calibration = stability_constants(cfg)
    out = {"constants": k.to_dict(), "calibration": calibration,
           "iterate_floor": stability.required_n_iterate_floor(k),
           "unnormalized": {"eps": cfg.eps_acc, "n": stability.required_n_unnormalized(k, cfg.eps_acc)}}
    try:
        pc = stability.posterior_constants(k)
        out["posterior"] = {"eps": cfg.eps_post, "c": pc.to_dict(),
                            "n": {f"{m:g}": stability.required_n_posterior(k, cfg.eps_post, m) for m in cfg.ms}}
    except (ParameterError, AssumptionError) as exc:  # the posterior chain needs S >= 2, T >= 2
        out["posterior"] = {"error": str(exc)}
    return out


def verify_bounds(cfg: ExperimentConfig) -> dict:
    model, w, k, calibration = stability_constants(cfg)
    report = stability.verify_bounds(model, w, k, cfg.seeds, cfg.eps_acc, cfg.eps_post, cfg.ms)
    report["calibration"] = calibration
    return report


def sweep_mixing(S_values: Sequence[int], trials: int, r: float, construction: str = "max-degree",
                 seed0: int = 0) -> list[dict]:
    """(S, trial, lambda2, rho*, tau) rows.

    Each (S, trial) pair rejection-samples from its own stream, so trials
    are independent and adding sizes leaves existing rows unchanged.
    """
    rows = []
    for S in S_values:
        for i in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence([seed0, int(S), i]))
            g = sample_connected_rgg_rng(S, r, rng)
            lam = lambda2(build_mixing(g, construction))
            rho = rho_star(lam)
            rows.append({"S": S, "trial": i, "lambda2": lam, "rho_star": rho, "tau": mixing_time(rho)})
    return rows
