"""Experiment configuration: sectioned TOML, validated against a fixed schema."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .estimators import ReplicationPlan
from .geometry import IndexSetGeometry, ShapeC, build_index_set
from .lattice_sim import GarchParams, KernelPsi
from .tailmodels import TailModel, VolModelY

EXPERIMENTS = ("simulate", "eta-theory", "eta-estimate", "spectral", "clusters", "limit-test",
               "garch-index", "geometry-check")

NUM = (int, float)
SCHEMA = {
    "": {"experiment": str, "seed": int, "threads": int, "out": str},
    "tail": {"alpha": NUM, "p_xi": NUM},
    "kernel": {"coefficients": list, "start": int, "offsets": list, "values": list},
    "garch": {"alpha0": NUM, "alpha1": NUM, "beta1": NUM, "burn_in": int},
    "y": {"kind": str, "s": NUM, "mu": NUM, "sigma": NUM, "scales": list, "probs": list,
          "base": (str, dict), "gamma": NUM},
    "geometry": {"shape": str, "d": int, "lo": list, "hi": list, "boxes": list, "center": list,
                 "radius": NUM, "c_n": (int, float, list), "t_n": (int, list), "x_n": (int, float, list),
                 "schedule": list},
    "plan": {"replications": int, "thresholds": list, "x": NUM, "m": (int, list), "K": NUM,
             "samples": int, "quantile": NUM, "rules": list, "regions": str, "eta": NUM,
             "literal_exponent": bool, "mc_samples": int, "export_replications": int},
}
SECTIONS = tuple(k for k in SCHEMA if k)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _check(section: str, data: dict) -> None:
    allowed = SCHEMA[section]
    where = f"[{section}]" if section else "top level"
    for key, value in data.items():
        if not section and key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a table")
            _check(key, value)
            continue
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' at {where}")
        typ = allowed[key]
        if isinstance(value, bool) and typ is not bool:
            raise ConfigError(f"'{key}' at {where} has wrong type bool")
        if not isinstance(value, typ):
            raise ConfigError(f"'{key}' at {where} has wrong type {type(value).__name__}")


@dataclass
class ExperimentConfig:
    data: dict

    def __post_init__(self):
        _check("", self.data)
        kind = self.data.get("experiment")
        if kind not in EXPERIMENTS:
            raise ConfigError(f"'experiment' must be one of {', '.join(EXPERIMENTS)}; got {kind!r}")
        try:
            self._validate_sections()
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    # parsing

    @classmethod
    def loads(cls, text: str) -> ExperimentConfig:
        try:
            return cls(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    def dumps(self) -> str:
        return tomli_w.dumps(self.data)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def with_overrides(self, seed=None, reps=None, threads=None, out=None) -> ExperimentConfig:
        data = self.to_dict()
        if seed is not None:
            data["seed"] = seed
        if threads is not None:
            data["threads"] = threads
        if out is not None:
            data["out"] = out
        if reps is not None:
            data.setdefault("plan", {})["replications"] = reps
        return ExperimentConfig(data)

    # accessors

    @property
    def experiment(self) -> str:
        return self.data["experiment"]

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    @property
    def threads(self) -> int:
        return int(self.data.get("threads", 1))

    @property
    def out(self) -> str:
        return self.data.get("out", "results")

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    def require(self, *names: str) -> None:
        for name in names:
            if name not in self.data:
                raise ConfigError(f"experiment '{self.experiment}' needs a [{name}] section")

    def tail(self) -> TailModel:
        self.require("tail")
        s = self.section("tail")
        return TailModel(float(s["alpha"]), float(s.get("p_xi", 1.0)))

    def kernel(self) -> KernelPsi | None:
        if "kernel" not in self.data:
            return None
        s = self.section("kernel")
        if "coefficients" in s:
            if "offsets" in s or "values" in s:
                raise ConfigError("[kernel] takes either coefficients or offsets/values")
            return KernelPsi.from_1d([float(c) for c in s["coefficients"]], int(s.get("start", 0)))
        if "offsets" not in s or "values" not in s:
            raise ConfigError("[kernel] needs coefficients or offsets and values")
        return KernelPsi(tuple(tuple(int(u) for u in o) for o in s["offsets"]),
                         tuple(float(v) for v in s["values"]))

    def garch(self) -> GarchParams | None:
        if "garch" not in self.data:
            return None
        s = self.section("garch")
        return GarchParams(float(s["alpha0"]), float(s["alpha1"]), float(s["beta1"]))

    @property
    def burn_in(self) -> int:
        return int(self.section("garch").get("burn_in", 10_000))

    def ymodel(self) -> VolModelY:
        s = self.section("y")
        return VolModelY.from_dict(s) if s else VolModelY.constant()

    def shape(self) -> ShapeC:
        self.require("geometry")
        s = self.section("geometry")
        kind = s.get("shape", "unit-box")
        if kind == "unit-box":
            return ShapeC.unit_box(int(s.get("d", 1)))
        if kind == "box":
            if "boxes" in s:
                return ShapeC.box_union([(tuple(lo), tuple(hi)) for lo, hi in s["boxes"]])
            return ShapeC.box(tuple(s["lo"]), tuple(s["hi"]))
        if kind == "disc":
            return ShapeC.disc(tuple(s["center"]), float(s["radius"]))
        raise ConfigError(f"unknown geometry shape {kind!r}")

    def geometry(self, t_n=None) -> IndexSetGeometry:
        s = self.section("geometry")
        if "c_n" not in s or ("t_n" not in s and t_n is None):
            raise ConfigError("[geometry] needs c_n and t_n")
        return build_index_set(self.shape(), s["c_n"], s.get("t_n") if t_n is None else t_n, s.get("x_n"))

    @property
    def plan_section(self) -> dict:
        return self.section("plan")

    def ms(self, default=(1, 2, 5, 10, 20, 50)) -> tuple:
        m = self.plan_section.get("m", list(default))
        return tuple(m) if isinstance(m, list) else (m,)

    @property
    def K(self) -> float:
        return float(self.plan_section.get("K", math.inf))

    def replication_plan(self) -> ReplicationPlan:
        p = self.plan_section
        kernel, garch = self.kernel(), self.garch()
        return ReplicationPlan(
            geometry=self.geometry(),
            replications=int(p.get("replications", 100)),
            ymodel=self.ymodel(),
            tail=self.tail() if kernel is not None else None,
            kernel=kernel,
            garch=garch,
            thresholds=tuple(p.get("thresholds", [p.get("x", 1.0)])),
            seed=self.seed,
            threads=self.threads,
            burn_in=self.burn_in,
        )

    def _validate_sections(self) -> None:
        kind = self.experiment
        if self.threads < 1:
            raise ConfigError("'threads' must be at least 1")
        if "y" in self.data:
            self.ymodel()
        if "tail" in self.data:
            self.tail()
        if "kernel" in self.data and "garch" in self.data:
            raise ConfigError("give [kernel] (moving average) or [garch], not both")
        self.kernel()
        self.garch()
        if kind == "geometry-check":
            self.shape()
        elif kind == "garch-index":
            self.require("garch")
        elif kind == "eta-theory":
            if self.kernel() is not None:
                self.require("tail")
            elif self.garch() is None:
                raise ConfigError("eta-theory needs [kernel] or [garch]")
        else:
            if kind in ("spectral",) and self.kernel() is None:
                raise ConfigError("spectral needs a [kernel] section")
            self.replication_plan()
