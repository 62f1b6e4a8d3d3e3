"""Command line entry points: run experiments, tune proposals, self-test.

Exit codes: 0 on success, 1 when a run or check fails, 2 for
configuration problems (unreadable file, bad key, bad value).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .api import AcssError, ConfigError, ZERO_REG
from .estimator import AcssConfig, draw_noise, solve_perturbed
from .gof import compute_pvalue, run_acss
from .harness import (
    EXPERIMENTS,
    load_config,
    run_experiment,
    summary_table,
    write_csv,
)
from .models import GaussianMeanModel, GlmModel
from .samplers import ProposalConfig, mh_chain_batch, tune_mixing_rho, tune_subset_size
from .conditional import ConditionalContext


def _threads_arg(value: int | None) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("ACSS_THREADS")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"ACSS_THREADS must be an integer, got {env!r}")


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, seed=args.seed, threads=_threads_arg(args.threads))
    total = len(cfg.signals) * cfg.reps
    start = time.perf_counter()

    def progress(done: int, n: int) -> None:
        if done % 50 == 0 or done == n:
            el = time.perf_counter() - start
            print(f"\r{done}/{n} replications ({el:.0f}s)", end="",
                  file=sys.stderr, flush=True)

    records = run_experiment(cfg, progress=progress)
    print(file=sys.stderr)
    out = args.out or cfg.out or f"{cfg.experiment.replace('-', '_')}_results.csv"
    write_csv(records, out)
    print(f"wrote {len(records)} records ({total} replications) to {out}")
    print(summary_table(records, alpha=cfg.alpha))
    return 0


def _cmd_tune(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, seed=args.seed)
    exp = EXPERIMENTS[cfg.experiment]
    ss = np.random.SeedSequence((cfg.seed, exp.exp_id, 0, 0, 0))
    data_rng, acss_rng, _ = map(np.random.default_rng, ss.spawn(3))
    pieces = exp.make_rep(cfg.signals[0], cfg.params_dict, data_rng)
    acss_cfg = AcssConfig(sigma=float(np.sqrt(cfg.sigma2)),
                          init_radius_rule=cfg.init_radius_rule,
                          subset_tune_sims=cfg.subset_tune_sims,
                          subset_tune_steps=cfg.subset_tune_steps,
                          rho_tune_sims=cfg.rho_tune_sims)
    w_rng, tune_rng, _ = acss_rng.spawn(3)
    est = solve_perturbed(pieces.model, ZERO_REG, pieces.x,
                          draw_noise(pieces.model.d, w_rng), acss_cfg)
    if not est.is_ssosp:
        print("solve failed on the null dataset; nothing to tune", file=sys.stderr)
        return 1
    family = cfg.proposal
    if family == "auto":
        family = "subset" if pieces.model.has_product_form else "ar"
    tuner = tune_subset_size if family == "subset" else tune_mixing_rho
    tr = tuner(pieces.model, ZERO_REG, est.theta_hat, acss_cfg, tune_rng)
    knob = "subset size" if tr.family == "subset" else "mixing rho"
    print(f"experiment: {cfg.experiment}")
    print(f"proposal family: {tr.family}")
    print(f"chosen {knob}: {tr.chosen}")
    print(f"chain length: {tr.steps}")
    for cand in sorted(tr.acceptance):
        line = f"  candidate {cand:g}: acceptance {tr.acceptance[cand]:.3f}"
        if "copy_correlation" in tr.extra:
            line += f", copy correlation {tr.extra['copy_correlation'][cand]:.3f}"
        print(line)
    if tr.low_acceptance:
        print("warning: no candidate reached the acceptance floor")
    return 0


def _selftest_checks():
    rng = np.random.default_rng(7)

    def toy_closed_form():
        model = GaussianMeanModel(40)
        cfg = AcssConfig(sigma=0.7)
        for _ in range(5):
            x = rng.normal(1.3, 1.0, 40)
            w = draw_noise(1, rng)
            est = solve_perturbed(model, ZERO_REG, x, w, cfg)
            want = x.mean() - cfg.sigma * w[0] / 40
            assert est.is_ssosp and abs(est.theta_hat[0] - want) < 1e-8

    def pvalue_formula():
        assert compute_pvalue(2.0, np.array([1.0, 2.0, 3.0])) == 0.75
        assert compute_pvalue(5.0, np.zeros(9)) == 0.1

    def toy_end_to_end():
        model = GaussianMeanModel(30)
        x = rng.normal(0.0, 1.0, 30)
        res1 = run_acss(model, x, lambda v: abs(v.mean()), AcssConfig(sigma=0.5),
                        19, np.random.default_rng(11), topology="iid")
        res2 = run_acss(model, x, lambda v: abs(v.mean()), AcssConfig(sigma=0.5),
                        19, np.random.default_rng(11), topology="iid")
        assert res1.pvalue == res2.pvalue and 0 < res1.pvalue <= 1

    def fd_gradient():
        Z = rng.standard_normal((25, 3))
        model = GlmModel(Z)
        x = (rng.random(25) < 0.5).astype(float)
        th = rng.normal(0, 0.3, 3)
        g = model.grad_neg_loglik(th, x)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-6
            fd = (model.neg_loglik(th + e, x) - model.neg_loglik(th - e, x)) / 2e-6
            assert abs(fd - g[i]) < 1e-5 * max(1.0, abs(g[i]))

    def chain_moves():
        model = GaussianMeanModel(30)
        x = rng.normal(0.0, 1.0, 30)
        cfg = AcssConfig(sigma=0.5)
        est = solve_perturbed(model, ZERO_REG, x, draw_noise(1, rng), cfg)
        ctx = ConditionalContext(model, ZERO_REG, est.theta_hat, cfg.sigma, cfg)
        pcfg = ProposalConfig(family="subset", steps=20, subset_size=5)
        _, rate = mh_chain_batch(ctx, pcfg, np.tile(x, (8, 1)), 20, rng)
        assert 0 < rate <= 1

    return [toy_closed_form, pvalue_formula, toy_end_to_end, fd_gradient, chain_moves]


def _cmd_selftest() -> int:
    failures = 0
    for check in _selftest_checks():
        name = check.__name__
        try:
            check()
        except Exception as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"ok   {name}")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acss",
        description="Goodness-of-fit testing via approximately exchangeable "
                    "data copies sampled around a perturbed penalized fit.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configured experiment, write CSV")
    run_p.add_argument("--config", required=True, help="path to a key=value config file")
    run_p.add_argument("--seed", type=int, default=None, help="override the root seed")
    run_p.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: ACSS_THREADS or 1)")
    run_p.add_argument("--out", default=None, help="output CSV path")

    tune_p = sub.add_parser("tune", help="report tuned proposal settings for a config")
    tune_p.add_argument("--config", required=True)
    tune_p.add_argument("--seed", type=int, default=None)

    sub.add_parser("selftest", help="run quick internal consistency checks")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "tune":
            return _cmd_tune(args)
        return _cmd_selftest()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AcssError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
