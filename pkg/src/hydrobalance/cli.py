"""Command-line entry point: ``hydrobalance <subcommand> [--config FILE] [--seed S] [--out DIR] [--jobs J]``.

Every subcommand writes a ``manifest`` next to its data files.  Passing that
manifest back as ``--config`` (same subcommand) reproduces the data files
byte for byte.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import des, harness, mv, pde
from .config import (Config, ConfigError, load_config, parse_times, time_tag, write_csv,
                     write_manifest)
from .params import ParameterError, derive


def _common(p):
    p.add_argument("--config", help="YAML config or a manifest from an earlier run")
    p.add_argument("--seed", type=int, help="override model.seed")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for replications")


def build_parser():
    ap = argparse.ArgumentParser(prog="hydrobalance", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hydrobalance {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="discrete-event simulation of the n-server system")
    _common(p)
    p.add_argument("--snapshots", type=parse_times, help="comma-separated snapshot times")
    p.add_argument("--replications", type=int, help="override des.replications")

    p = sub.add_parser("pde", help="hydrodynamic tail PDE")
    _common(p)
    p.add_argument("--times", type=parse_times, help="comma-separated output times")

    p = sub.add_parser("mv", help="McKean-Vlasov particles")
    _common(p)
    p.add_argument("--mode", choices=("pde-fed", "self", "stationary"))
    p.add_argument("--snapshots", type=parse_times, help="comma-separated snapshot times")

    p = sub.add_parser("stationary", help="closed-form stationary profile and macroscopic indices")
    _common(p)

    p = sub.add_parser("routing-check", help="JSQ(ell) rank law against exact enumeration")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--replacement", choices=("without", "with"))

    p = sub.add_parser("experiment", help="cross-layer experiment with pass/fail report")
    _common(p)
    p.add_argument("--name", choices=harness.EXPERIMENTS)
    return ap


def _resolve(args):
    cfg = load_config(args.config)
    prev = cfg.run or {}
    if prev and prev.get("command") != args.command:
        raise ConfigError(f"manifest was written by {prev.get('command')!r}, not {args.command!r}")
    options = dict(prev.get("options") or {})
    cfg = replace(cfg, run=None)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg, options


# ---------------------------------------------------------------- subcommands

def _snapshot_rows(measures):
    for rep, m in enumerate(measures):
        for x in m.samples:
            yield rep, x


def cmd_sim(args, cfg, options, out):
    if args.snapshots is not None:
        cfg = replace(cfg, snapshots=args.snapshots)
    if args.replications is not None:
        cfg = replace(cfg, des=replace(cfg.des, replications=args.replications))
    plan = des.SnapshotPlan(times=cfg.snapshots, tracked=cfg.des.tracked)
    rep = des.run_replications(cfg.model, cfg.initial, plan, cfg.replication_seeds(), jobs=args.jobs,
                               record_ranks=cfg.des.record_ranks)
    for k, t in enumerate(plan.times):
        write_csv(out / f"snapshot_{time_tag(t)}.csv", ("replication", "x"),
                  _snapshot_rows([o.snapshots[k].measure for o in rep.outputs]))
    write_csv(out / "stats.csv", ("t", "mean", "m2", "var", "stderr", "sigma_n", "sigma_n_se"),
              zip(plan.times, rep.mean, rep.second_moment, rep.variance, rep.mean_se, rep.sigma_n, rep.sigma_n_se))
    counts = np.zeros(cfg.model.n, dtype=np.int64)
    if cfg.des.record_ranks:
        for o in rep.outputs:
            counts += o.rank_histogram
    write_csv(out / "ranks.csv", ("r", "count"),
              ((r + 1, int(c)) for r, c in enumerate(counts)) if cfg.des.record_ranks else ())
    if plan.tracked:
        rows = []
        for r, o in enumerate(rep.outputs):
            for i in plan.tracked:
                xs, idle = o.tracked[i]
                rows.extend((r, i, t, a, b) for t, a, b in zip(plan.times, xs, idle))
        write_csv(out / "tracked.csv", ("replication", "queue", "t", "x", "idle"), rows)
    return cfg, options, 0


def _stationary_rows(co, x):
    try:
        prof = pde.stationary(co)
    except ValueError:
        return None, ()
    return prof, zip(x, prof.v(x), prof.u(x))


def cmd_pde(args, cfg, options, out):
    if args.times is not None:
        cfg = replace(cfg, snapshots=args.times)
    grids = harness.pde_reference(cfg, cfg.snapshots)
    macro = []
    for g in grids:
        dens = pde.density(g)
        write_csv(out / f"v_{time_tag(g.t)}.csv", ("x", "v", "u"), zip(g.x, g.v, dens.u))
        mac = pde.macro_stats(g)
        macro.append((g.t, mac.m_mac, mac.sigma_mac))
    write_csv(out / "macro.csv", ("t", "m_mac", "sigma_mac"), macro)
    co = pde.PdeCoeffs.from_derived(derive(cfg.model))
    x = np.linspace(0.0, cfg.pde.x_max, int(round(cfg.pde.x_max / cfg.pde.dx)) + 1)
    write_csv(out / "stationary.csv", ("x", "v", "u"), _stationary_rows(co, x)[1])
    return cfg, options, 0


def cmd_mv(args, cfg, options, out):
    if args.mode is not None:
        cfg = replace(cfg, mv=replace(cfg.mv, mode=args.mode))
    if args.snapshots is not None:
        cfg = replace(cfg, snapshots=args.snapshots)
    d = derive(cfg.model)
    co = pde.PdeCoeffs.from_derived(d)
    t_end = cfg.snapshots[-1]
    if cfg.mv.mode == "pde-fed":
        grid = pde.init_tail(cfg.initial, co, x_max=cfg.pde.x_max, dx=cfg.pde.dx)
        _, hist = pde.evolve_history(grid, t_end, cfl=cfg.pde.cfl, dt_max=cfg.pde.dt_max)
        drift = mv.DriftSource.pde_fed(hist)
    elif cfg.mv.mode == "self":
        drift = mv.DriftSource.self_consistent()
    else:
        drift = mv.DriftSource.stationary(pde.stationary(co))
    snaps, _ = mv.mv_run(cfg.mv.N, cfg.initial, drift, cfg.mv.dt, t_end, cfg.snapshots,
                         mv.MvCoeffs.from_derived(d), seed=cfg.seed)
    rows = []
    for s in snaps:
        write_csv(out / f"snapshot_{time_tag(s.t)}.csv", ("replication", "x"), _snapshot_rows([s.measure]))
        st = s.measure.stats()
        rows.append((s.t, st.mean, st.second_moment, st.variance, s.mean_local_time))
    write_csv(out / "stats.csv", ("t", "mean", "m2", "var", "mean_local_time"), rows)
    return cfg, options, 0


def cmd_stationary(args, cfg, options, out):
    co = pde.PdeCoeffs.from_derived(derive(cfg.model))
    x = np.linspace(0.0, cfg.pde.x_max, int(round(cfg.pde.x_max / cfg.pde.dx)) + 1)
    prof, rows = _stationary_rows(co, x)
    if prof is None:
        raise ConfigError(f"no stationary solution for rho={co.rho} >= 0")
    write_csv(out / "stationary.csv", ("x", "v", "u"), rows)
    mac = pde.stationary_macro(prof)
    write_csv(out / "stationary_macro.csv", ("alpha", "m_mac", "sigma_mac", "robin_residual"),
              [(prof.alpha, mac.m_mac, mac.sigma_mac, prof.robin_residual())])
    return cfg, options, 0


def cmd_routing(args, cfg, options, out):
    for key in ("n", "ell", "replacement"):
        if getattr(args, key) is not None:
            options[key] = getattr(args, key)
    options.setdefault("n", 6)
    options.setdefault("ell", 3)
    options.setdefault("replacement", "without")
    rows = harness.routing_table(int(options["n"]), int(options["ell"]), options["replacement"])
    write_csv(out / "routing.csv", ("r", "p_paper", "p_oracle", "abs_err"), rows)
    status = 0 if max(r[3] for r in rows) < 1e-12 else 1
    return cfg, options, status


def cmd_experiment(args, cfg, options, out):
    exp = dict(cfg.experiment or {})
    if args.name is not None:
        exp["name"] = args.name
    cfg = replace(cfg, experiment=exp)
    spec = harness.ExperimentSpec.from_config(cfg)
    report = harness.run_experiment(spec, jobs=args.jobs)
    status = harness.emit_report(report, out, command="experiment", options=options)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {report.name}.{c.metric} t={c.t:g} value={c.value:.6g} "
              f"tol={c.tolerance:g}")
    return Config.from_dict(report.manifest), options, status


COMMANDS = {"sim": cmd_sim, "pde": cmd_pde, "mv": cmd_mv, "stationary": cmd_stationary,
            "routing-check": cmd_routing, "experiment": cmd_experiment}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg, options = _resolve(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg, options, status = COMMANDS[args.command](args, cfg, options, out)
        write_manifest(out / "manifest", cfg, args.command, options, __version__)
    except (ConfigError, ParameterError, harness.StageError, OSError, ValueError) as exc:
        print(f"hydrobalance {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
