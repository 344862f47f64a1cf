"""Command line entry point ``fjnudge``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from fjnudge import bench
from fjnudge.dyn import fixed_point, make_streams, mean_step, simulate_free
from fjnudge.metrics import MetricsReport, verify_cost_identity


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config, flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--scenario", type=int, choices=sorted(bench.SCENARIOS))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--policy", choices=bench.POLICIES)
    p.add_argument("--steps", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--noise", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--replications", type=int)
    p.add_argument("--quiet", action="store_true", help="suppress per-step logs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fjnudge", description="Stochastic opinion dynamics with MPC nudging.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "free evolution without control"),
                       ("control", "one closed-loop experiment"),
                       ("sweep", "scenario x lambda x policy table"),
                       ("verify", "fixed-point and expected-cost checks")):
        _common(sub.add_parser(name, help=text))
    return parser


def config_from_args(args) -> bench.ExperimentConfig:
    cfg = bench.ExperimentConfig()
    if args.config is not None:
        cfg = bench.ExperimentConfig.from_dict(json.loads(args.config.read_text()))
    over = {}
    for flag, attr in (("seed", "seed"), ("scenario", "scenario"), ("lam", "lambda_value"), ("policy", "policy"),
                       ("steps", "steps"), ("noise", "noise_on"), ("replications", "replications")):
        val = getattr(args, flag)
        if val is not None:
            over[attr] = val
    if args.horizon is not None:
        over["params"] = replace(cfg.params, T=args.horizon)
    return replace(cfg, **over)


def cmd_simulate(cfg: bench.ExperimentConfig, out_dir) -> int:
    net = bench.build_network(cfg)
    u_o = cfg.bias()
    streams = make_streams(cfg.seed)
    x0 = streams["init"].uniform(0.0, 1.0, net.n)
    y0 = (streams["init"].random(net.n) < 0.5).astype(np.int8)
    traj = simulate_free(net, u_o, cfg.delta if cfg.noise_on else 0.0, x0, y0, cfg.steps,
                         streams["noise"], streams["acceptance"])
    report = MetricsReport.from_run(traj.x, traj.y)
    xs = fixed_point(net, u_o)
    err = float(np.abs(traj.cesaro_x[-1] - xs).max())
    print(f"gamma_T={report.gamma_T:.2f}% tau_ob={report.tau_ob_pairs} |cesaro(x) - x*|_inf={err:.4f}")
    if out_dir is not None:
        run_dir = Path(out_dir) / replace(cfg, policy="None").label()
        run_dir.mkdir(parents=True, exist_ok=True)
        traj.write_csv(run_dir / "trajectory.csv")
        bench.write_json(run_dir / "metrics.json", report.to_dict())
        bench.write_json(run_dir / "config.json", cfg.to_dict())
    return 0


def cmd_control(cfg: bench.ExperimentConfig, out_dir) -> int:
    res = bench.run_experiment(cfg, out_dir)
    agg = res.aggregate()
    print(f"{cfg.label()}: gamma_T={agg['gamma_T']:.2f}% delta_u={agg['delta_u']:.3f} "
          f"(per step {agg['delta_u_per_step']:.3f}) tau_ob={agg['tau_ob_pairs']:.1f} "
          f"failed={len(res.failures)}/{cfg.replications}")
    return 0 if res.ok else 1


def cmd_sweep(cfg: bench.ExperimentConfig, args) -> int:
    scenarios = (args.scenario,) if args.scenario is not None else (1, 2, 3, 4)
    lambdas = (args.lam,) if args.lam is not None else bench.LAMBDAS
    policies = (args.policy,) if args.policy is not None else bench.POLICIES
    configs = bench.default_sweep(cfg, lambdas, scenarios, policies)
    rows, _ = bench.run_sweep(configs, args.out_dir)
    print(f"{'scen':>4} {'lambda':>6} {'policy':>6} {'gamma_T':>8} {'delta_u':>9} {'per step':>8} {'tau_ob':>6} fail")
    for r in rows:
        print(f"{r['scenario']:>4} {r['lambda']:>6} {r['policy']:>6} {r['gamma_T']:>8.2f} {r['delta_u']:>9.3f} "
              f"{r['delta_u_per_step']:>8.3f} {r['tau_ob_pairs']:>6.1f} {r['failed']:>4}")
    return 0 if all(r["failed"] == 0 for r in rows) else 1


def cmd_verify(cfg: bench.ExperimentConfig) -> int:
    net = bench.build_network(cfg)
    u_o = cfg.bias()
    xs = fixed_point(net, u_o)
    rng = make_streams(cfg.seed)["init"]
    x = rng.uniform(0.0, 1.0, net.n)
    for _ in range(10_000):
        x = mean_step(x, net, u_o)
    fp_err = float(np.abs(x - xs).max())
    mc, analytic = verify_cost_identity(rng.uniform(0.0, 1.0, net.n), 10**6, rng)
    bound = 4.0 * np.sqrt(net.n**2 / 4.0 / 10**6)
    ok_fp, ok_mc = fp_err <= 1e-8, abs(mc - analytic) <= bound
    print(f"fixed point: |x(10^4) - x*|_inf = {fp_err:.2e} {'ok' if ok_fp else 'FAIL'}")
    print(f"expected cost: mc={mc:.5f} analytic={analytic:.5f} bound={bound:.4f} {'ok' if ok_mc else 'FAIL'}")
    return 0 if ok_fp and ok_mc else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"fjnudge: invalid configuration: {exc}", file=sys.stderr)
        return 2
    if args.command == "simulate":
        return cmd_simulate(cfg, args.out_dir)
    if args.command == "control":
        return cmd_control(cfg, args.out_dir)
    if args.command == "sweep":
        return cmd_sweep(cfg, args)
    return cmd_verify(cfg)


if __name__ == "__main__":
    sys.exit(main())
