"""Structured-text run configuration, manifests and CSV output.

A config is a YAML mapping with the sections below; every section is
optional and falls back to the reference constants.  Unknown keys are
rejected at every level.

.. code-block:: yaml

    model:      {n, lambda, lambda_hat, b, mu, mu_hat, ell, replacement, service, seed}
    initial:    {law: uniform, lo: 0, hi: 10}
    snapshots:  [1.0, 5.0]
    des:        {replications, record_ranks, tracked}
    pde:        {x_max, dx, cfl, dt_max}
    mv:         {N, dt, mode}
    experiment: {name, ...}
    run:        {command, options, version}

A manifest is the same document with every default filled in plus a
``run`` section naming the subcommand and its options, so feeding it back
through ``--config`` repeats the run exactly.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .initial import InitialCondition
from .params import ModelParams, ParameterError, reference_params

SECTIONS = ("model", "initial", "snapshots", "des", "pde", "mv", "experiment", "run")
FLOAT_FORMAT = ".12g"


class ConfigError(ParameterError):
    pass


def _strict(section, d, allowed):
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return dict(d)


@dataclass(frozen=True)
class DesSettings:
    replications: int = 1
    record_ranks: bool = False
    tracked: tuple = ()

    def __post_init__(self):
        if int(self.replications) < 1:
            raise ConfigError("des.replications must be >= 1")
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "record_ranks", bool(self.record_ranks))
        object.__setattr__(self, "tracked", tuple(int(i) for i in self.tracked))


@dataclass(frozen=True)
class PdeSettings:
    x_max: float = 60.0
    dx: float = 0.01
    cfl: float = 0.5
    dt_max: float | None = None

    def __post_init__(self):
        if not (self.dx > 0 and self.x_max > self.dx and 0 < self.cfl <= 1):
            raise ConfigError("pde needs dx > 0, x_max > dx and 0 < cfl <= 1")
        if self.dt_max is not None and self.dt_max <= 0:
            raise ConfigError("pde.dt_max must be positive")


MV_MODES = ("pde-fed", "self", "stationary")


@dataclass(frozen=True)
class MvSettings:
    N: int = 100000
    dt: float = 1e-3
    mode: str = "pde-fed"

    def __post_init__(self):
        if int(self.N) < 1 or not self.dt > 0:
            raise ConfigError("mv needs N >= 1 and dt > 0")
        if self.mode not in MV_MODES:
            raise ConfigError(f"mv.mode must be one of {MV_MODES}")
        object.__setattr__(self, "N", int(self.N))


@dataclass(frozen=True)
class Config:
    model: ModelParams = field(default_factory=reference_params)
    initial: InitialCondition = field(default_factory=InitialCondition)
    snapshots: tuple = (1.0, 5.0)
    des: DesSettings = field(default_factory=DesSettings)
    pde: PdeSettings = field(default_factory=PdeSettings)
    mv: MvSettings = field(default_factory=MvSettings)
    experiment: dict | None = None
    run: dict | None = None

    def __post_init__(self):
        t = tuple(float(s) for s in self.snapshots)
        if any(s < 0 or not math.isfinite(s) for s in t) or list(t) != sorted(set(t)):
            raise ConfigError("snapshots must be distinct, sorted, finite and nonnegative")
        object.__setattr__(self, "snapshots", t)

    @property
    def seed(self):
        return self.model.seed

    def with_seed(self, seed):
        return replace(self, model=self.model.replace(seed=int(seed)))

    def replication_seeds(self):
        return [self.seed + k for k in range(self.des.replications)]

    def to_dict(self):
        d = {
            "model": self.model.to_dict(),
            "initial": self.initial.to_dict(),
            "snapshots": [float(s) for s in self.snapshots],
            "des": {"replications": self.des.replications, "record_ranks": self.des.record_ranks,
                    "tracked": list(self.des.tracked)},
            "pde": {k: (None if v is None else float(v)) for k, v in asdict(self.pde).items()},
            "mv": {"N": self.mv.N, "dt": float(self.mv.dt), "mode": self.mv.mode},
        }
        if self.experiment is not None:
            d["experiment"] = self.experiment
        if self.run is not None:
            d["run"] = self.run
        return d

    @classmethod
    def from_dict(cls, d):
        d = _strict("config", d or {}, SECTIONS)
        kw = {}
        if "model" in d:
            kw["model"] = ModelParams.from_dict(_strict("model", d["model"], d["model"] or {}))
        if "initial" in d:
            kw["initial"] = InitialCondition.from_dict(d["initial"] or {})
        if "snapshots" in d:
            kw["snapshots"] = tuple(d["snapshots"])
        if "des" in d:
            kw["des"] = DesSettings(**_strict("des", d["des"], ("replications", "record_ranks", "tracked")))
        if "pde" in d:
            kw["pde"] = PdeSettings(**_strict("pde", d["pde"], ("x_max", "dx", "cfl", "dt_max")))
        if "mv" in d:
            kw["mv"] = MvSettings(**_strict("mv", d["mv"], ("N", "dt", "mode")))
        if d.get("experiment") is not None:
            kw["experiment"] = dict(d["experiment"])
        if d.get("run") is not None:
            kw["run"] = _strict("run", d["run"], ("command", "options", "version"))
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def dump_yaml(d):
    return yaml.safe_dump(d, sort_keys=False, default_flow_style=False, allow_unicode=True)


def load_config(path=None):
    """Config from a YAML file; ``None`` gives the all-defaults config."""
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as fh:
        return Config.from_dict(yaml.safe_load(fh))


def parse_times(text):
    """'1,5,10' -> (1.0, 5.0, 10.0)"""
    return tuple(float(s) for s in text.split(",") if s.strip())


def fmt(value):
    """Decimal text with 12 significant digits for floats; ints and strings unchanged."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int) or (hasattr(value, "dtype") and value.dtype.kind in "iu"):
        return str(int(value))
    if isinstance(value, str):
        return value
    return format(float(value), FLOAT_FORMAT)


def time_tag(t):
    return format(float(t), FLOAT_FORMAT)


def write_csv(path, header, rows):
    """UTF-8, comma-delimited, header row, '\\n' line endings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_manifest(path, config, command, options, version):
    doc = config.to_dict()
    doc["run"] = {"command": command, "options": options, "version": version}
    Path(path).write_text(dump_yaml(doc), encoding="utf-8")
    return doc
