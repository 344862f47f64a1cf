"""Closed-loop experiments, seeded sweeps and their flat-file outputs."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from fjnudge import estim
from fjnudge.dyn import Trajectory, make_streams, mean_step, sample_acceptance, sample_noise
from fjnudge.errors import OddPopulation
from fjnudge.metrics import MetricsReport
from fjnudge.net import GraphGenParams, Network, check_assumption2, generate_clustered_er
from fjnudge.policy import ControllerState, Kind, PolicyParams, feasible_input_set, receding_horizon_step

log = logging.getLogger(__name__)

POLICIES = ("None", "WC", "TV", "EWC", "ETV")
SCENARIOS = {1: (0.7, 0.7), 2: (0.2, 0.8), 3: (0.6, 0.8), 4: (0.2, 0.3)}
LAMBDAS = (0.25, 0.75)
METRIC_KEYS = ("gamma_T", "delta_u", "delta_u_per_step", "tau_ob_pairs", "tau_ob_steps")


def scenario_bias(scenario: int, n: int) -> np.ndarray:
    """Bias profile of a scenario: first half of the agents, then second half."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario}")
    lo, hi = SCENARIOS[scenario]
    if scenario == 1:
        return np.full(n, lo)
    if n % 2:
        raise OddPopulation(f"scenario {scenario} needs an even population, got n={n}")
    return np.repeat([lo, hi], n // 2)


@dataclass(frozen=True)
class ExperimentConfig:
    network: GraphGenParams | Network = field(default_factory=GraphGenParams)
    scenario: int | tuple = 1
    lambda_value: float | tuple = 0.25
    policy: str = "WC"
    noise_on: bool = False
    steps: int = 30
    params: PolicyParams = field(default_factory=PolicyParams)
    delta: float = 0.025
    seed: int = 0
    replications: int = 1
    regenerate_network: bool = False
    discount: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if isinstance(self.scenario, int) and self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario}")

    @property
    def n(self) -> int:
        return self.network.n

    def bias(self) -> np.ndarray:
        if isinstance(self.scenario, int):
            return scenario_bias(self.scenario, self.n)
        u_o = np.asarray(self.scenario, dtype=float)
        if u_o.shape != (self.n,):
            raise ValueError("explicit bias vector must have one entry per agent")
        return u_o

    def label(self) -> str:
        scen = f"s{self.scenario}" if isinstance(self.scenario, int) else "scustom"
        lam = f"l{self.lambda_value}" if np.isscalar(self.lambda_value) else "lcustom"
        return f"{scen}_{lam}_{self.policy}_{'noisy' if self.noise_on else 'clean'}_seed{self.seed}"

    def to_dict(self) -> dict:
        d = {
            "scenario": self.scenario if isinstance(self.scenario, int) else list(self.scenario),
            "lambda": self.lambda_value if np.isscalar(self.lambda_value) else list(self.lambda_value),
            "policy": self.policy,
            "noise": self.noise_on,
            "steps": self.steps,
            "horizon": self.params.T,
            "params": asdict(self.params),
            "delta": self.delta,
            "seed": self.seed,
            "replications": self.replications,
            "regenerate_network": self.regenerate_network,
            "discount": self.discount,
        }
        if isinstance(self.network, Network):
            d["network"] = {"inline": self.network.to_dict()}
        else:
            d["network"] = {"generate": asdict(self.network)}
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        kw = {}
        net = doc.get("network")
        if net is not None:
            if "inline" in net:
                kw["network"] = Network.from_dict(net["inline"])
            else:
                kw["network"] = GraphGenParams(**net.get("generate", {}))
        params = dict(doc.get("params", {}))
        if "horizon" in doc:
            params["T"] = doc["horizon"]
        kw["params"] = PolicyParams(**params)
        for key, attr in (("scenario", "scenario"), ("lambda", "lambda_value"), ("policy", "policy"),
                          ("noise", "noise_on"), ("steps", "steps"), ("delta", "delta"), ("seed", "seed"),
                          ("replications", "replications"), ("regenerate_network", "regenerate_network"),
                          ("discount", "discount")):
            if key in doc:
                val = doc[key]
                kw[attr] = tuple(val) if isinstance(val, list) else val
        return cls(**kw)


@dataclass
class RunOutput:
    trajectory: Trajectory
    controller: tuple
    report: MetricsReport


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list  # MetricsReport or None for failed replications
    failures: list = field(default_factory=list)
    paths: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def aggregate(self) -> dict:
        good = [r for r in self.reports if r is not None]
        out = {}
        for key in METRIC_KEYS:
            vals = np.array([getattr(r, key) for r in good], dtype=float)
            out[key] = float(vals.mean()) if vals.size else float("nan")
            out[key + "_std"] = float(vals.std()) if vals.size else float("nan")
        return out


def build_network(cfg: ExperimentConfig, replication: int = 0) -> Network:
    if isinstance(cfg.network, Network):
        net = cfg.network.with_lambda(cfg.lambda_value)
    elif cfg.regenerate_network:
        net = generate_clustered_er(cfg.network, cfg.lambda_value, make_streams(cfg.seed, replication)["graph"])
    else:
        net = generate_clustered_er(cfg.network, cfg.lambda_value)
    if not check_assumption2(net):
        raise ValueError("some node has no path to an agent with lambda < 1")
    return net


def closed_loop(cfg: ExperimentConfig, replication: int = 0) -> RunOutput:
    """One replication: draw the initial condition, then simulate with the chosen policy.

    ``WC``/``TV`` measure the exact mean propagated by the mean dynamics, ``EWC``/``ETV``
    the running average of past acceptances.
    """
    net = build_network(cfg, replication)
    n, steps = net.n, cfg.steps
    u_o = cfg.bias()
    streams = make_streams(cfg.seed, replication)
    x0 = streams["init"].uniform(0.0, 1.0, n)
    y0 = (streams["init"].random(n) < 0.5).astype(np.int8)

    controlled = cfg.policy != "None"
    use_estimate = cfg.policy in ("EWC", "ETV")
    kind = Kind(cfg.policy[-2:]) if controlled else None
    box = feasible_input_set(u_o, cfg.delta) if controlled else None

    X = np.empty((steps + 1, n))
    Y = np.empty((steps, n), dtype=np.int8)
    U_nc = np.zeros((steps, n))
    U_c = np.zeros((steps, n))
    E = np.empty((steps, n)) if use_estimate else None
    X[0] = x0
    xbar = x0.copy()
    est = estim.EstimatorState.empty(n, cfg.discount)
    cstate = ControllerState()
    A, b = net.A, net.b
    for t in range(steps):
        Y[t] = y0 if t == 0 else sample_acceptance(X[t], streams["acceptance"])
        if controlled:
            if use_estimate:
                meas = estim.current(est)
                E[t] = meas
            else:
                meas = np.clip(xbar, 0.0, 1.0)
            U_c[t], cstate = receding_horizon_step(cstate, meas, kind, net, u_o, box, cfg.params)
        est = estim.update(est, Y[t])
        if cfg.noise_on:
            U_nc[t] = sample_noise(u_o, cfg.delta, streams["noise"])
        X[t + 1] = A @ X[t] + b * (u_o + U_c[t] + U_nc[t])
        xbar = mean_step(xbar, net, u_o, U_c[t])
        log.info("t=%d adopters=%d |u_c|_1=%.4f", t, int(Y[t].sum()), float(U_c[t].sum()))
    traj = Trajectory(X, Y, U_nc, U_c if controlled else None, E)
    report = MetricsReport.from_run(X, Y, U_c)
    return RunOutput(traj, cstate.history, report)


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_controller_csv(path, history) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "status", "iterations", "objective", "max_slack", "u_l1"])
        for h in history:
            w.writerow([h.t, h.status, h.iterations, repr(h.objective), repr(h.max_slack), repr(h.u_l1)])


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every replication of ``cfg``; a failing replication is recorded, not raised."""
    result = ExperimentResult(cfg, [])
    for rep in range(cfg.replications):
        try:
            run = closed_loop(cfg, rep)
        except Exception as exc:  # noqa: BLE001  recorded per replication
            log.error("%s replication %d failed: %s", cfg.label(), rep, exc)
            result.reports.append(None)
            result.failures.append({"replication": rep, "error": f"{type(exc).__name__}: {exc}"})
            continue
        result.reports.append(run.report)
        if out_dir is not None:
            run_dir = Path(out_dir) / f"{cfg.label()}_r{rep}"
            run_dir.mkdir(parents=True, exist_ok=True)
            run.trajectory.write_csv(run_dir / "trajectory.csv")
            write_controller_csv(run_dir / "controller.csv", run.controller)
            write_json(run_dir / "metrics.json", run.report.to_dict())
            write_json(run_dir / "config.json", {**cfg.to_dict(), "replication": rep})
            result.paths.append(str(run_dir))
    return result


def default_sweep(base: ExperimentConfig, lambdas=LAMBDAS, scenarios=(1, 2, 3, 4),
                  policies=POLICIES) -> list[ExperimentConfig]:
    return [replace(base, lambda_value=lam, scenario=s, policy=p)
            for lam in lambdas for s in scenarios for p in policies]


SUMMARY_FIELDS = ("scenario", "lambda", "policy", "noise", "replications", "failed") + tuple(
    k + suffix for k in METRIC_KEYS for suffix in ("", "_std"))


def summary_row(res: ExperimentResult) -> dict:
    cfg = res.config
    row = {
        "scenario": cfg.scenario if isinstance(cfg.scenario, int) else "custom",
        "lambda": cfg.lambda_value if np.isscalar(cfg.lambda_value) else "custom",
        "policy": cfg.policy,
        "noise": int(cfg.noise_on),
        "replications": cfg.replications,
        "failed": len(res.failures),
    }
    row.update(res.aggregate())
    return row


def _run_cell(args):
    cfg, out_dir = args
    return run_experiment(cfg, out_dir)


def run_sweep(configs, out_dir=None, workers: int = 1) -> tuple[list[dict], list[ExperimentResult]]:
    """Run all cells and return the summary table (one row per cell) and the raw results.

    With ``out_dir`` the table is also written to ``summary.csv`` and ``summary.json``.
    Cells are independent, so ``workers > 1`` runs them in separate processes
    without changing any number.
    """
    jobs = [(cfg, out_dir) for cfg in configs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = [summary_row(r) for r in results]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "summary.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        write_json(out / "summary.json", rows)
    return rows, results
