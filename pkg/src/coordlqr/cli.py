"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 not stabilizable, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .are import stability_report, synthesize_steady
from .config import RunConfig, load_config
from .exceptions import ConfigError, CoordLQRError, NoConvergence
from .riccati import lyapunov_gap, naive_policy_value, optimal_cost, synthesize_finite, value
from .sim import (
    accumulated_cost,
    average_feedback_coefficients,
    max_state_norm,
    simulate,
)
from .verify import campaign, verify_instance

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_STABILIZABLE = 2
EXIT_VERIFY_FAILED = 3

DEFAULT_STEPS = 40


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _mat(M):
    return None if M is None else np.asarray(M, dtype=float).tolist()


def _report_dict(rep) -> dict:
    return {
        "spectral_radius": rep.spectral_radius_closed_loop,
        "observable": rep.observable,
        "are_solved": rep.are_solved,
        "p_positive_definite": rep.p_positive_definite,
        "p_plus_pbar_positive_definite": rep.p_plus_pbar_positive_definite,
        "verdict": rep.verdict,
        "disagreements": list(rep.disagreements),
    }


def _emit(report: dict, out_dir: Path | None, name: str) -> None:
    text = json.dumps(report, indent=2)
    print(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text + "\n", encoding="utf-8")


def _out_dir(cfg: RunConfig, args) -> Path | None:
    if args.out is not None:
        return Path(args.out)
    return Path(cfg.out_dir) if cfg.out_dir else None


def _horizon(cfg: RunConfig, args) -> int | None:
    return args.horizon if args.horizon is not None else cfg.horizon


def cmd_synthesize(cfg: RunConfig, args) -> int:
    ens, tol = cfg.ensemble, cfg.tolerances
    N = _horizon(cfg, args)
    rep = stability_report(ens, cfg.policy.gains, tol) if cfg.policy.is_constant else None
    report: dict = {}
    code = EXIT_OK
    if N is not None:
        sched = synthesize_finite(ens, cfg.policy, N)
        report.update(
            mode="finite",
            horizon=N,
            P=_mat(sched.P),
            Pbar=_mat(sched.Pbar),
            K=_mat(sched.K),
            Kbar=_mat(sched.Kbar),
            cost=optimal_cost(sched, cfg.initial, ens.mu) if cfg.initial is not None else None,
            residuals={"lyapunov_gap": lyapunov_gap(sched, naive_policy_value(ens, cfg.policy, N))},
        )
    else:
        if rep is None:
            raise ConfigError("the infinite horizon needs a constant 'Fbar'", cfg.source)
        report["mode"] = "infinite"
        if rep.stabilizable:
            steady = synthesize_steady(ens, cfg.policy.gains, tol)
            report.update(
                P=_mat(steady.P),
                Pbar=_mat(steady.Pbar),
                K=_mat(steady.K),
                Kbar=_mat(steady.Kbar),
                average_feedback_coefficients=_mat(
                    average_feedback_coefficients(ens.mu, steady.Kbar)
                ),
                cost=(value(steady.P, steady.Pbar, cfg.initial.x0, ens.mu)
                      if cfg.initial is not None else None),
                residuals=dict(steady.residuals, iterations=steady.iterations),
            )
        else:
            report.update(P=_mat(rep.P), Pbar=None, K=None, Kbar=None, cost=None, residuals={})
            code = EXIT_NOT_STABILIZABLE
    if rep is not None:
        report["spectral_radius"] = rep.spectral_radius_closed_loop
        report["verdict"] = rep.verdict
        report["stability"] = _report_dict(rep)
    _emit(report, _out_dir(cfg, args), "synthesis.json")
    return code


def _write_csvs(traj, out_dir: Path, n: int, m: int) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    sub_path = out_dir / "subsystems.csv"
    avg_path = out_dir / "averages.csv"
    with sub_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "subsystem"] + [f"x{j}" for j in range(n)] + [f"u{j}" for j in range(m)])
        for k in range(traj.steps + 1):
            for i in range(traj.states.shape[1]):
                u = [fmt(x) for x in traj.controls[k, i]] if k < traj.steps else [""] * m
                w.writerow([k, i] + [fmt(x) for x in traj.states[k, i]] + u)
    with avg_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"xbar{j}" for j in range(n)] + [f"ubar{j}" for j in range(m)]
                   + ["stage_cost", "constraint_residual"])
        for k in range(traj.steps):
            w.writerow([k] + [fmt(x) for x in traj.avg_state[k]] + [fmt(x) for x in traj.avg_control[k]]
                       + [fmt(traj.stage_costs[k]), fmt(traj.constraint_residuals[k])])
    return sub_path, avg_path


def cmd_simulate(cfg: RunConfig, args) -> int:
    ens, tol = cfg.ensemble, cfg.tolerances
    if cfg.initial is None:
        raise ConfigError("simulation needs an [initial] section", cfg.source)
    N = _horizon(cfg, args)
    if N is not None:
        gains = synthesize_finite(ens, cfg.policy, N)
        steps = args.steps if args.steps is not None else (cfg.steps or N + 1)
        closed_form = optimal_cost(gains, cfg.initial, ens.mu)
    else:
        rep = stability_report(ens, cfg.policy.gains, tol)
        if not rep.stabilizable:
            _emit({"verdict": rep.verdict, "spectral_radius": rep.spectral_radius_closed_loop},
                  None, "")
            return EXIT_NOT_STABILIZABLE
        gains = synthesize_steady(ens, cfg.policy.gains, tol)
        steps = args.steps if args.steps is not None else (cfg.steps or DEFAULT_STEPS)
        closed_form = value(gains.P, gains.Pbar, cfg.initial.x0, ens.mu)
    traj = simulate(ens, gains, cfg.policy, cfg.initial, steps)
    out_dir = _out_dir(cfg, args) or Path("out")
    sub_path, avg_path = _write_csvs(traj, out_dir, ens.n, ens.m)
    Kbar = gains.Kbar if N is None else gains.Kbar[0]
    summary = {
        "steps": steps,
        "accumulated_cost": accumulated_cost(traj),
        "closed_form_cost": closed_form,
        "final_max_state_norm": max_state_norm(traj),
        "max_constraint_residual": float(np.max(traj.constraint_residuals)) if steps else 0.0,
        "average_feedback_coefficients": _mat(average_feedback_coefficients(ens.mu, Kbar)),
        "files": [str(sub_path), str(avg_path)],
    }
    _emit(summary, out_dir, "summary.json")
    return EXIT_OK


def _result_dict(res) -> dict:
    return {
        "cost_distributed": res.cost_distributed,
        "cost_closed_form": res.cost_closed_form,
        "cost_oracle": res.cost_oracle,
        "cost_gap": res.cost_gap,
        "control_gap": res.control_gap,
        "equilibrium_residual": res.equilibrium_residual,
        "adjoint_residual": res.adjoint_residual,
        "terminal_costate": res.terminal_costate,
        "constraint_residual": res.constraint_residual,
        "lyapunov_gap": res.lyapunov_gap,
        "kkt_residual": res.kkt_residual,
        "passed": res.passed,
        "failures": res.failures,
    }


def cmd_verify(cfg: RunConfig, args) -> int:
    ens, tol = cfg.ensemble, cfg.tolerances
    N = _horizon(cfg, args)
    if N is None:
        raise ConfigError("verification needs a finite horizon (set 'horizon' or --horizon)", cfg.source)
    if cfg.initial is None:
        raise ConfigError("verification needs an [initial] section", cfg.source)
    schedule = synthesize_finite(ens, cfg.policy, N)
    if args.zero_kbar:
        schedule = replace(schedule, Kbar=np.zeros_like(schedule.Kbar))
    res = verify_instance(ens, cfg.policy, N, cfg.initial, schedule=schedule, tol=tol)
    report = {"horizon": N, "instance": _result_dict(res)}
    ok = res.passed
    if args.seed is not None:
        results = campaign(args.seed, args.count, tol)
        failed = [i for i, r in enumerate(results) if not r.passed]
        report["campaign"] = {
            "seed": args.seed,
            "count": args.count,
            "passed": args.count - len(failed),
            "failed_instances": failed,
            "worst_cost_gap": max(r.cost_gap for r in results),
            "worst_control_gap": max(r.control_gap for r in results),
            "worst_mp_residual": max(max(r.equilibrium_residual, r.adjoint_residual) for r in results),
        }
        ok = ok and not failed
    report["passed"] = ok
    _emit(report, _out_dir(cfg, args), "verification.json")
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def cmd_report(cfg: RunConfig, args) -> int:
    if not cfg.policy.is_constant:
        raise ConfigError("the stability report needs a constant 'Fbar'", cfg.source)
    rep = stability_report(cfg.ensemble, cfg.policy.gains, cfg.tolerances)
    report = _report_dict(rep)
    report.update(P=_mat(rep.P), Pbar=_mat(rep.Pbar))
    _emit(report, _out_dir(cfg, args), "stability.json")
    return EXIT_OK if rep.stabilizable else EXIT_NOT_STABILIZABLE


COMMANDS = {
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coordlqr",
        description="Distributed LQ synthesis for ensembles with an average-behaviour constraint.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--horizon", type=int, metavar="N")
        p.add_argument("--steps", type=int, metavar="S")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            p.add_argument("--count", type=int, default=50, help="instances in the --seed campaign")
            p.add_argument("--zero-kbar", action="store_true",
                           help="fault injection: zero the average-feedback gains before checking")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    for flag in ("horizon", "steps", "seed"):
        value_ = getattr(args, flag)
        if value_ is not None and value_ < 0:
            print(f"error: --{flag} must be nonnegative", file=sys.stderr)
            return EXIT_INPUT
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_STABILIZABLE
    except CoordLQRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
