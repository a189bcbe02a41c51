"""Command-line entry point: ``floasim run|scenario|scenarios|bounds|verify-attack|selftest``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import bounds
from .config import SimConfig, load_config
from .errors import ConfigError, NoConvergenceGuarantee
from .power import PolicyKind

EXIT_ABORTED = 3


def _parse_seeds(text: str | None):
    if text is None:
        return None
    return [int(s) for s in text.split(",") if s.strip()]


def _parse_sweep(text: str, U: int) -> list[int]:
    """``N=0..U`` or ``N=a..b`` (inclusive) or ``N=a,b,c``."""
    key, _, spec = text.partition("=")
    if key.strip() != "N" or not spec:
        raise argparse.ArgumentTypeError(f"bad sweep {text!r}; expected N=0..U")
    spec = spec.replace("U", str(U))
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",")]


def _print_summary(label: str, summary: dict) -> None:
    agg = summary["aggregate"]
    acc, loss = agg["final_acc"], agg["final_loss"]
    flag = " ABORTED" if summary["aborted"] else ""
    omega = summary["verdict"]["omega"]
    omega_text = "n/a" if omega is None else f"{omega:.4g}"
    print(f"{label}: final_acc {acc['mean']:.4f} +/- {acc['std']:.4f}  final_loss {loss['mean']:.4g}"
          f"  omega {omega_text}{flag}")


def cmd_run(args) -> int:
    from .sim import run_experiment

    cfg = load_config(args.config)
    result = run_experiment(cfg, seeds=_parse_seeds(args.seeds), out_dir=args.out, jobs=args.jobs)
    _print_summary(cfg.run.name, result.summary())
    if result.any_aborted and not args.allow_divergence:
        print("error: at least one round aborted (use --allow-divergence to accept)", file=sys.stderr)
        return EXIT_ABORTED
    return 0


def _comparison_rows(results) -> list[dict]:
    rows = []
    for label, res in results:
        s = res.summary()
        row = {"label": label, "policy": s["policy"], "N": s["N"], "lr": res.config.training.lr,
               "aborted_seeds": sum(r.aborted for r in res.runs)}
        for key, stats in s["aggregate"].items():
            row[f"{key}_mean"] = stats["mean"]
            row[f"{key}_std"] = stats["std"]
        rows.append(row)
    return rows


def cmd_scenario(args) -> int:
    from .scenarios import scenario
    from .sim import load_datasets, run_experiment

    base = load_config(args.config) if args.config else SimConfig()
    overrides = {}
    if args.rounds:
        overrides["training"] = {"rounds": args.rounds}
    if args.data:
        overrides["data"] = {"path": args.data}
    if overrides:
        base = base.replace(**overrides)
    members = scenario(args.name, base)
    datasets = load_datasets(base)
    results = []
    for m in members:
        res = run_experiment(m.config, seeds=_parse_seeds(args.seeds), out_dir=args.out, datasets=datasets)
        _print_summary(m.label, res.summary())
        results.append((m.label, res))
    if args.out:
        rows = _comparison_rows(results)
        with open(Path(args.out) / f"{args.name}_comparison.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    aborted = any(res.any_aborted for _, res in results)
    if aborted and not args.allow_divergence:
        print("error: at least one round aborted (use --allow-divergence to accept)", file=sys.stderr)
        return EXIT_ABORTED
    return 0


def cmd_scenarios(args) -> int:
    from .scenarios import FAMILIES, scenario

    for name in FAMILIES:
        print(name)
        for m in scenario(name):
            print(f"  {m.label}")
    return 0


def cmd_bounds(args) -> int:
    from .sim import bound_params, estimate_constants

    cfg = load_config(args.config)
    kind = PolicyKind(cfg.policy.kind)
    if kind is PolicyKind.EF:
        print("error: bounds are defined for CI and BEV only", file=sys.stderr)
        return 2
    U = cfg.system.workers
    ns = _parse_sweep(args.sweep, U) if args.sweep else [cfg.attack.n]
    Ts = [int(t) for t in args.Ts.split(",")]
    b = cfg.bounds
    if None in (b.L, b.delta, b.eps, b.f_gap):
        est = estimate_constants(cfg, seed=cfg.run.seeds[0], rounds=args.estimate_rounds)
        L, delta, eps, f_gap, note = est.L, est.delta, est.eps, est.f_gap, est.label
    else:
        L, delta, eps, f_gap, note = b.L, b.delta, b.eps, b.f_gap, ""
    base = bound_params(cfg)
    base = bounds.BoundParams(base.sigmas, base.p_max, base.dim, L=L, delta=delta, eps=eps, z=cfg.noise_std())
    selection = {"weakest_channel": "weakest"}.get(cfg.attack.selection, "strongest")
    order = bounds.attacker_order(base, selection)
    alpha_hat = cfg.training.lr
    rows = []
    for n in ns:
        p = base.with_attackers(order[:n])
        for r in bounds.bound_curve(kind, p, Ts, alpha_hat, f_gap):
            r.note = "; ".join(x for x in (r.note, note) if x)
            rows.append(r)
    out = Path(args.out) if args.out else None
    fields = ("T", "policy", "N", "rhs", "omega", "omega_big", "alpha", "note")
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for r in rows:
            writer.writerow([getattr(r, f) for f in fields])
    finally:
        if out:
            fh.close()
    scan = bounds.omega_scan(kind, base, selection)
    n_max = bounds.max_tolerable_n(kind, base, selection)
    info = sys.stderr if out is None else sys.stdout
    print(f"omega sign scan ({selection}-first): " + " ".join(f"N={n}:{'+' if o > 0 else '-'}"
                                                         for n, o in enumerate(scan)), file=info)
    print(f"max tolerable N (omega > 0): {n_max}", file=info)
    if kind is PolicyKind.CI and len(set(base.sigmas)) == 1 and len(set(base.p_max)) == 1:
        printed, solved = bounds.ci_threshold_printed(U), bounds.ci_threshold_solved(U)
        print(f"note: closed-form CI tolerance as printed U/(1+sqrt(pi U)) = {printed:.3f}; solving the "
              f"isomorphic omega expression gives U/(1+sqrt(pi U)/2) = {solved:.3f}; the scan above is authoritative",
              file=info)
    return 0


def cmd_verify_attack(args) -> int:
    from .attack import AttackerSet, OracleScenario, Selection
    from .checks import toy_scenario, verify_strongest_attack
    from .channel import ChannelProfile, snr_to_noise_std
    from .data import make_blobs
    from .model import ModelArch, init_params
    from .power import PowerPolicy
    from .rng import RngStreams

    if args.config:
        cfg = load_config(args.config)
        seed = cfg.run.seeds[0]
        streams = RngStreams(seed)
        arch = ModelArch(cfg.model.input_dim, cfg.model.hidden_dim, cfg.model.output_dim)
        data = make_blobs(cfg.data.n_train, arch.input_dim, arch.output_dim, streams.generator("toy-data"),
                          cfg.data.separation, cfg.data.noise)
        U, n = cfg.system.workers, max(1, cfg.attack.n)
        kind = PolicyKind(cfg.policy.kind)
        policy = PowerPolicy(PolicyKind.BEV if kind is PolicyKind.EF else kind, cfg.policy.ci_truncate)
        dim = arch.num_params
        p_max = np.asarray(cfg.p_max_vector()) if cfg.system.p_max is not None else np.full(U, float(dim))
        snr = 10.0 if cfg.system.snr_db is None else cfg.system.snr_db
        z = cfg.system.noise_std if cfg.system.noise_std is not None else snr_to_noise_std(float(p_max.min()), dim, snr)
        scen = OracleScenario(arch, data, init_params(arch, streams.generator("init")),
                              AttackerSet(frozenset(range(U - n, U)), Selection.RANDOM), policy,
                              ChannelProfile(cfg.sigma_vector(), z), p_max, cfg.training.lr, seed)
    else:
        scen = toy_scenario(args.seed)
    results = verify_strongest_attack(scen, args.candidates, args.rounds, args.seed)
    best = results[0]
    print(f"strongest attack: E[dF] = {best.mean:.6g} +/- {best.stderr:.2g}")
    worst = min(results[1:], key=lambda r: r.margin_se)
    for r in sorted(results[1:], key=lambda r: r.margin_se)[: args.show]:
        print(f"  {r.name:16s} E[dF] = {r.mean:.6g}  paired margin = {r.margin_se:.2f} SE")
    ok = worst.margin_se >= 2.0
    print(("PASS" if ok else "FAIL") + f": smallest paired margin {worst.margin_se:.2f} SE ({worst.name})")
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    from .checks import selftest

    rows = selftest()
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="floasim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configured experiment")
    p.add_argument("config")
    p.add_argument("--seeds", help="comma-separated seeds (overrides run.seeds)")
    p.add_argument("--out", help="output directory for CSV and JSON")
    p.add_argument("--jobs", type=int, default=1, help="seeds run in parallel processes")
    p.add_argument("--allow-divergence", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("scenario", help="run a built-in experiment family")
    p.add_argument("name")
    p.add_argument("--config", help="base config the family is applied to")
    p.add_argument("--seeds")
    p.add_argument("--rounds", type=int)
    p.add_argument("--data", help="MNIST directory")
    p.add_argument("--out")
    p.add_argument("--allow-divergence", action="store_true")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("scenarios", help="list built-in experiment families")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("bounds", help="evaluate convergence-rate bounds")
    p.add_argument("config")
    p.add_argument("--sweep", help="attacker counts, e.g. N=0..U")
    p.add_argument("--Ts", default="100,500,1000,5000,10000")
    p.add_argument("--estimate-rounds", type=int, default=50)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify-attack", help="Monte Carlo check that the strongest attack is strongest")
    p.add_argument("config", nargs="?")
    p.add_argument("--candidates", type=int, default=64)
    p.add_argument("--rounds", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--show", type=int, default=5)
    p.set_defaults(func=cmd_verify_attack)

    p = sub.add_parser("selftest", help="quick built-in property checks")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, NoConvergenceGuarantee) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
