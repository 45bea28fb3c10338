"""Cross-layer experiments and their reports.

Each experiment runs a fixed pipeline and returns a :class:`Report` whose
checks all have the form ``value < tolerance``.  Orderings ("KS shrinks as
n grows") are encoded as a difference against a zero tolerance.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import des, mv, pde
from .config import Config, ConfigError, dump_yaml, write_csv, write_manifest
from .measure import ks_distance, w1_distance
from .params import ServiceDist, derive, limit_constants
from .routing import enumerate_selection_law, rank_law, ranks, select_direct
from .rng import PURPOSE_ROUTING, RngState

EXPERIMENTS = ("hydro", "mv_vs_pde", "stationary_limits", "routing_check", "invariance", "variance_tracking")

DEFAULTS = {
    "hydro": {"replications": 20, "n_compare": 500, "tolerances": {"ks_mean": 0.05, "median_order": 0.0}},
    "variance_tracking": {"replications": 20, "tolerances": {"rel_err": 0.10}},
    "invariance": {
        "replications": 20,
        "services": [{"kind": "exponential"}, {"kind": "lognormal", "sigma": 1.0}],
        "tolerances": {"ks_pair": 0.05},
    },
    "mv_vs_pde": {
        "t": 1.0, "chaos_N": [1000, 10000], "chaos_seeds": 16, "chaos_x": 5.0,
        "tolerances": {"ks_pde_fed": 0.01, "ks_self_vs_fed": 0.02, "chaos_order": 0.0},
    },
    "stationary_limits": {
        "b_min": 1e-3, "b_max": 100.0, "b_count": 11, "rho": -0.01, "x_range": 200.0,
        "tolerances": {"exp_sup": 0.01, "dirac_mean": 0.05},
    },
    "routing_check": {"n": 6, "ell": 3, "draws": 200000, "tolerances": {"law_abs": 1e-12, "freq_z": 4.0}},
}


class StageError(RuntimeError):
    """A layer failed inside an experiment; the message names the stage."""


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    config: Config
    options: dict

    @property
    def tolerances(self):
        return self.options["tolerances"]

    @classmethod
    def from_config(cls, cfg, name=None):
        exp = dict(cfg.experiment or {})
        name = exp.pop("name", name)
        if name not in EXPERIMENTS:
            raise ConfigError(f"experiment.name must be one of {EXPERIMENTS}, got {name!r}")
        opts = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS[name].items()}
        unknown = set(exp) - set(opts)
        if unknown:
            raise ConfigError(f"unknown keys for experiment {name!r}: {sorted(unknown)}")
        tol = dict(opts["tolerances"])
        user_tol = exp.pop("tolerances", None) or {}
        bad = set(user_tol) - set(tol)
        if bad:
            raise ConfigError(f"unknown tolerances for {name!r}: {sorted(bad)}")
        tol.update({k: float(v) for k, v in user_tol.items()})
        opts.update(exp)
        opts["tolerances"] = tol
        if any(v < 0 or not math.isfinite(v) for v in tol.values()):
            raise ConfigError("tolerances must be finite and nonnegative")
        for k, v in tol.items():
            if v == 0 and not k.endswith("order"):
                raise ConfigError(f"tolerance {k!r} must be positive")
        return cls(name=name, config=cfg, options=opts)

    def resolved(self):
        """Config dict with the experiment section fully expanded (for manifests)."""
        d = self.config.to_dict()
        d["experiment"] = {"name": self.name, **self.options}
        return d


@dataclass
class Check:
    metric: str
    t: float
    value: float
    tolerance: float
    se: float = math.nan

    @property
    def passed(self):
        return bool(self.value < self.tolerance)


@dataclass
class Report:
    name: str
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def check(self, metric, t=None):
        for c in self.checks:
            if c.metric == metric and (t is None or c.t == t):
                return c
        raise KeyError((metric, t))


REPORT_HEADER = ("experiment", "metric", "t", "value", "se", "tolerance", "passed")


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage attached
        raise StageError(f"stage {name!r} failed: {exc}") from exc


# ---------------------------------------------------------------- PDE reference

def pde_reference(cfg, times, params=None):
    """PDE tails at each requested time, evolved from the configured initial law."""
    d = derive(params or cfg.model)
    co = pde.PdeCoeffs.from_derived(d)
    grid = pde.init_tail(cfg.initial, co, x_max=cfg.pde.x_max, dx=cfg.pde.dx)
    out = []
    for t in times:
        grid = pde.evolve(grid, t, cfl=cfg.pde.cfl, dt_max=cfg.pde.dt_max)
        out.append(grid)
    return out


_REPLICATION_CACHE = {}


def replications(params, ic, times, seeds, jobs=1, record_ranks=False):
    """run_replications memoized within the process (shared by experiments on one config)."""
    key = (params, dump_yaml(ic.to_dict()), tuple(times), tuple(seeds), bool(record_ranks))
    if key not in _REPLICATION_CACHE:
        plan = des.SnapshotPlan(times=tuple(times))
        _REPLICATION_CACHE[key] = des.run_replications(params, ic, plan, seeds, jobs=jobs,
                                                       record_ranks=record_ranks)
    return _REPLICATION_CACHE[key]


def clear_cache():
    _REPLICATION_CACHE.clear()


def _se(a):
    a = np.asarray(a, dtype=float)
    return float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.nan


# ---------------------------------------------------------------- pipelines

def _hydro(spec, jobs):
    cfg, o = spec.config, spec.options
    seeds = [cfg.seed + k for k in range(int(o["replications"]))]
    times = cfg.snapshots
    grids = _stage("pde", pde_reference, cfg, times)
    rep = _stage("des", replications, cfg.model, cfg.initial, times, seeds, jobs)
    rep_cmp = None
    if o.get("n_compare"):
        p_small = cfg.model.replace(n=int(o["n_compare"]))
        rep_cmp = _stage("des(n_compare)", replications, p_small, cfg.initial, times, seeds, jobs)
    report = Report(name=spec.name, seeds=seeds)
    rows = []
    for k, (t, g) in enumerate(zip(times, grids)):
        tail = g.tail()
        ks = np.array([ks_distance(o_.snapshots[k].measure, tail) for o_ in rep.outputs])
        w1 = np.array([w1_distance(o_.snapshots[k].measure, tail) for o_ in rep.outputs])
        mac = pde.macro_stats(g)
        sig, sig_se = float(rep.sigma_n[k]), float(rep.sigma_n_se[k])
        rel = abs(sig - mac.sigma_mac) / mac.sigma_mac if mac.sigma_mac > 0 else math.nan
        med_small = math.nan
        if rep_cmp is not None:
            ks_small = np.array([ks_distance(o_.snapshots[k].measure, tail) for o_ in rep_cmp.outputs])
            med_small = float(np.median(ks_small))
        rows.append((t, float(ks.mean()), _se(ks), float(np.median(ks)), med_small,
                     float(w1.mean()), _se(w1), sig, sig_se, mac.sigma_mac, rel))
        if spec.name == "hydro":
            report.checks.append(Check("ks_mean", t, float(ks.mean()), o["tolerances"]["ks_mean"], _se(ks)))
            if rep_cmp is not None and t > 0:
                report.checks.append(Check("median_order", t, float(np.median(ks)) - med_small,
                                           o["tolerances"]["median_order"]))
        else:
            report.checks.append(Check("rel_err", t, rel, o["tolerances"]["rel_err"], sig_se / mac.sigma_mac))
    report.tables["metrics"] = (
        ("t", "ks_mean", "ks_se", "ks_median", "ks_median_n_compare", "w1_mean", "w1_se",
         "sigma_n", "sigma_n_se", "sigma_mac", "rel_err"), rows)
    return report


def _invariance(spec, jobs):
    cfg, o = spec.config, spec.options
    services = [ServiceDist.from_dict(s) for s in o["services"]]
    if len(services) < 2:
        raise ConfigError("invariance needs at least two service laws")
    sig = {round(s.sigma, 12) for s in services}
    if len(sig) != 1:
        raise ConfigError("invariance service laws must share sigma")
    seeds = [cfg.seed + k for k in range(int(o["replications"]))]
    # same times as hydro so the exponential-service replications are shared through the cache
    t = cfg.snapshots[-1]
    reps = [_stage(f"des({s.kind})", replications, cfg.model.replace(service=s), cfg.initial, cfg.snapshots,
                   seeds, jobs) for s in services]
    report = Report(name=spec.name, seeds=seeds)
    rows = []
    for i in range(len(services)):
        for j in range(i + 1, len(services)):
            ks = np.array([ks_distance(a.snapshots[-1].measure, b.snapshots[-1].measure)
                           for a, b in zip(reps[i].outputs, reps[j].outputs)])
            label = f"{services[i].kind}|{services[j].kind}"
            rows.append((label, t, float(ks.mean()), _se(ks), float(reps[i].sigma_n[-1]), float(reps[j].sigma_n[-1])))
            report.checks.append(Check(f"ks_pair[{label}]", t, float(ks.mean()), o["tolerances"]["ks_pair"], _se(ks)))
    report.tables["pairs"] = (("pair", "t", "ks_mean", "ks_se", "sigma_n_first", "sigma_n_second"), rows)
    return report


def _mv_vs_pde(spec, jobs):
    cfg, o = spec.config, spec.options
    t = float(o["t"])
    d = derive(cfg.model)
    co = pde.PdeCoeffs.from_derived(d)
    mc = mv.MvCoeffs.from_derived(d)
    grid = pde.init_tail(cfg.initial, co, x_max=cfg.pde.x_max, dx=cfg.pde.dx)
    final, hist = _stage("pde", pde.evolve_history, grid, t, cfl=cfg.pde.cfl, dt_max=cfg.pde.dt_max)
    tail = final.tail()
    N, dt = cfg.mv.N, cfg.mv.dt
    fed, _ = _stage("mv(pde_fed)", mv.mv_run, N, cfg.initial, mv.DriftSource.pde_fed(hist), dt, t, [t], mc, cfg.seed)
    slf, _ = _stage("mv(self)", mv.mv_run, N, cfg.initial, mv.DriftSource.self_consistent(), dt, t, [t], mc,
                    cfg.seed + 1)
    ks_fed = ks_distance(fed[0].measure, tail)
    ks_pair = ks_distance(fed[0].measure, slf[0].measure)
    report = Report(name=spec.name, seeds=[cfg.seed, cfg.seed + 1])
    report.checks.append(Check("ks_pde_fed", t, ks_fed, o["tolerances"]["ks_pde_fed"]))
    report.checks.append(Check("ks_self_vs_fed", t, ks_pair, o["tolerances"]["ks_self_vs_fed"]))
    report.tables["mv"] = (("t", "mode", "ks_vs_pde", "mean", "mean_local_time"), [
        (t, "pde_fed", ks_fed, fed[0].measure.stats().mean, fed[0].mean_local_time),
        (t, "self", ks_distance(slf[0].measure, tail), slf[0].measure.stats().mean, slf[0].mean_local_time),
    ])
    rms = []
    crow = []
    x_star = float(o["chaos_x"])
    for Nc in o["chaos_N"]:
        est = []
        for k in range(int(o["chaos_seeds"])):
            s = cfg.seed + 1000 + k
            snaps, _ = _stage("mv(chaos)", mv.mv_run, int(Nc), cfg.initial, mv.DriftSource.self_consistent(),
                              dt, t, [t], mc, s, keep_positions=True)
            e, se = mv.chaos_diagnostic(snaps[0].positions, x_star)
            est.append(e)
            crow.append((int(Nc), s, e, se))
        rms.append(math.sqrt(float(np.mean(np.square(est)))))
    report.tables["chaos"] = (("N", "seed", "estimate", "se"), crow)
    for k in range(1, len(rms)):
        report.checks.append(Check(f"chaos_order[{o['chaos_N'][k]}]", t, rms[k] - rms[k - 1],
                                   o["tolerances"]["chaos_order"]))
    return report


def stationary_sweep(b_values, rho=-0.01, lam=1.0, a=1.0, ell=4, x_range=200.0, n_points=4001):
    """(b, sup|v_stat - exp(-lam|rho|x/a)| on [0, x_range], m_mac, sigma_mac) for each b."""
    x = np.linspace(0.0, x_range, n_points)
    rate = lam * abs(rho) / a
    rows = []
    for b in b_values:
        c1 = -lam * rho + b
        prof = pde.stationary(limit_constants(c1, b, ell, a, lam))
        sup = float(np.max(np.abs(prof.v(x) - np.exp(-rate * x))))
        mac = pde.stationary_macro(prof)
        rows.append((float(b), sup, mac.m_mac, mac.sigma_mac))
    return rows


def _stationary_limits(spec, jobs):
    o = spec.options
    if not o["rho"] < 0:
        raise ConfigError("stationary_limits needs rho < 0")
    ell = spec.config.model.ell
    bs = np.geomspace(float(o["b_min"]), float(o["b_max"]), int(o["b_count"]))
    rows = _stage("stationary", stationary_sweep, bs, rho=float(o["rho"]), ell=ell, x_range=float(o["x_range"]))
    report = Report(name=spec.name)
    report.tables["sweep"] = (("b", "sup_exp_err", "m_mac", "sigma_mac"), rows)
    report.checks.append(Check("exp_sup", math.nan, rows[0][1], o["tolerances"]["exp_sup"]))
    report.checks.append(Check("dirac_mean", math.nan, rows[-1][2], o["tolerances"]["dirac_mean"]))
    return report


def routing_table(n, ell, replacement, x=None):
    """(r, p_law, p_oracle, abs_err) with the oracle from exact subset enumeration on distinct lengths."""
    x = np.arange(n, dtype=float)[::-1].copy() if x is None else np.asarray(x, dtype=float)
    law = rank_law(n, ell, replacement).probs
    by_queue = enumerate_selection_law(x, ell, replacement, exact=True)
    rk = ranks(x)
    oracle = np.zeros(n)
    for i, p in enumerate(by_queue):
        oracle[rk[i] - 1] = float(p)
    return [(r + 1, law[r], oracle[r], abs(law[r] - oracle[r])) for r in range(n)]


def _routing_check(spec, jobs):
    o = spec.options
    n, ell, draws = int(o["n"]), int(o["ell"]), int(o["draws"])
    seed = spec.config.seed
    # fixed vector with ties so the tie rule is exercised
    x = np.array([(k * 7) % max(n // 2, 1) for k in range(n)], dtype=float)
    report = Report(name=spec.name, seeds=[seed])
    rows = []
    for mode in ("without", "with"):
        tab = routing_table(n, ell, mode, x=x)
        law_err = max(r[3] for r in tab)
        report.checks.append(Check(f"law_abs[{mode}]", math.nan, law_err, o["tolerances"]["law_abs"]))
        law = rank_law(n, ell, mode).probs
        rk = ranks(x)
        rng = RngState(seed, PURPOSE_ROUTING, stream=0 if mode == "without" else 1)
        counts = np.zeros(n)
        for _ in range(draws):
            counts[rk[select_direct(x, ell, mode, rng)] - 1] += 1
        freq = counts / draws
        se = np.sqrt(np.maximum(law * (1 - law), 1e-300) / draws)
        z = np.abs(freq - law) / se
        report.checks.append(Check(f"freq_z[{mode}]", math.nan, float(z.max()), o["tolerances"]["freq_z"]))
        rows.extend((mode, r + 1, law[r], tab[r][2], freq[r], z[r]) for r in range(n))
    report.tables["routing"] = (("replacement", "r", "p_paper", "p_oracle", "p_empirical", "z"), rows)
    return report


_PIPELINES = {
    "hydro": _hydro, "variance_tracking": _hydro, "invariance": _invariance, "mv_vs_pde": _mv_vs_pde,
    "stationary_limits": _stationary_limits, "routing_check": _routing_check,
}


def run_experiment(spec, jobs=1):
    report = _PIPELINES[spec.name](spec, jobs)
    report.manifest = spec.resolved()
    return report


def emit_report(report, out_dir, command="experiment", options=None):
    """Write report.csv, one CSV per table and the manifest; return the exit status (0 pass, 1 fail)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", REPORT_HEADER,
              [(report.name, c.metric, c.t, c.value, c.se, c.tolerance, c.passed) for c in report.checks])
    for name, (header, rows) in report.tables.items():
        write_csv(out / f"{report.name}_{name}.csv", header, rows)
    if report.manifest:
        cfg = Config.from_dict(report.manifest)
        write_manifest(out / "manifest", cfg, command, options or {}, __version__)
    return 0 if report.passed else 1


__all__ = [
    "EXPERIMENTS", "ExperimentSpec", "Report", "Check", "StageError", "run_experiment", "emit_report",
    "pde_reference", "replications", "stationary_sweep", "routing_table", "clear_cache",
]
