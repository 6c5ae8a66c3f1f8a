"""Scenario configuration: JSON schema, validation and model construction.

A scenario is a single JSON document with nested sections (documented in the
README): ``model`` (source kind/parameters, functional parameters, p),
``initial`` (profile family), ``run`` (T, dt, stride), ``output``, ``seed``,
an ``experiment`` selector, and per-experiment ``options``.  Validation
errors carry the offending field path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DomainError
from .functionals import FunctionalSpec, Profile
from .model import Model
from .sources import (NAMED_KERNELS, SourceFn, compact_source, constant_source,
                      inv_square_p_source, log_source)

EXPERIMENTS = ("equilibrium", "simulate-pde", "simulate-dde", "linear-stability",
               "volterra-demo", "control-verify", "suite")


class ConfigError(ValueError):
    """Schema violation; the message names the field path."""


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


_MISSING = object()


def _get(section: dict, key: str, path: str, typ, default=_MISSING):
    if key not in section:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: required field is missing")
        return default
    val = section[key]
    if typ is float and isinstance(val, int):
        val = float(val)
    _expect(isinstance(val, typ), f"{path}.{key}",
            f"expected {getattr(typ, '__name__', typ)}, got {type(val).__name__}")
    return val


@dataclass
class Scenario:
    experiment: str
    seed: int
    model_cfg: dict
    initial_cfg: dict
    run_cfg: dict
    output_dir: str
    options: dict = field(default_factory=dict)
    sub_scenarios: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    # -- constructors ------------------------------------------------------------

    def build_source(self) -> SourceFn:
        cfg = self.model_cfg["source"]
        kind = cfg["kind"]
        h_inf = cfg.get("h_inf", 1.0)
        if kind == "constant":
            return constant_source(h_inf)
        name = cfg.get("kernel", "log")
        if kind == "kernel_inf":
            if name == "log":
                return log_source(h_inf)
            if name == "compact":
                return compact_source(h_inf, cfg.get("cutoff", 1.0))
            return SourceFn(kind="kernel_inf", h_inf=h_inf,
                            kernel=NAMED_KERNELS[name]())
        if kind == "kernel_p":
            if name == "inv_square":
                return inv_square_p_source(h_inf, cfg.get("kp", self.model_cfg["p"]))
            return SourceFn(kind="kernel_p", h_inf=h_inf,
                            kernel=NAMED_KERNELS[name](),
                            p=cfg.get("kp", self.model_cfg["p"]))
        tab = cfg["table"]
        return SourceFn(kind="tabulated", h_inf=h_inf,
                        table=(np.asarray(tab["y"], float), np.asarray(tab["h"], float)))

    def build_functional(self, source: SourceFn) -> FunctionalSpec:
        cfg = self.model_cfg.get("functional", {})
        q = cfg.get("q", 1.0)
        eps0 = cfg.get("eps0", 1.0)
        b_cfg = cfg.get("b", "h_at_eps0")
        if b_cfg == "h_at_eps0":
            b0 = q * float(source.eval(eps0, 0)) * cfg.get("b_scale", 1.0)
        else:
            b0 = float(b_cfg)
        a_cfg = cfg.get("a", "inverse_square")
        if a_cfg == "inverse_square":
            a_fn = lambda y: y ** -2.0
        elif a_cfg == "exponential":
            a_fn = lambda y: np.exp(-y)
        else:
            raise ConfigError(f"model.functional.a: unknown weight {a_cfg!r}")
        spec = FunctionalSpec(q=q, eps0=eps0, a=a_fn,
                              b=lambda y: np.full_like(np.asarray(y, float), b0))
        spec.check_dominates(source)
        return spec

    def build_model(self) -> Model:
        source = self.build_source()
        return Model(source, self.build_functional(source), self.model_cfg["p"])

    def build_initial(self, model: Model) -> Profile:
        cfg = self.initial_cfg
        family = cfg.get("family", "equilibrium")
        if family == "equilibrium":
            return model.equilibrium_profile_interpolated()
        if family == "wrong_equilibrium":
            other = Model(model.source, model.functional, cfg["p_prime"])
            return other.equilibrium_profile_interpolated()
        if family == "scaled_equilibrium":
            return model.equilibrium_profile_interpolated().scaled(cfg["factor"])
        if family == "perturbed_equilibrium":
            amp = cfg.get("amplitude", 1e-3)
            decay = cfg.get("decay", 1.0)
            xp = model.equilibrium_profile_interpolated()

            def pair(y):
                v, d = xp.pair_eval(y)
                bump = amp * np.exp(-decay * y)
                return v * (1.0 + bump), d * (1.0 + bump) - decay * bump * v

            return Profile(
                value=lambda y: pair(y)[0], deriv=lambda y: pair(y)[1],
                descriptor=f"perturbed-equilibrium(amp={amp:g})", pair=pair)
        raise ConfigError(f"initial.family: unknown family {family!r}")


def validate(doc: Any, path: str = "config") -> Scenario:
    _expect(isinstance(doc, dict), path, "top level must be an object")
    experiment = _get(doc, "experiment", path, str)
    _expect(experiment in EXPERIMENTS, f"{path}.experiment",
            f"must be one of {', '.join(EXPERIMENTS)}")
    seed = _get(doc, "seed", path, int, 0)
    _expect(seed >= 0, f"{path}.seed", "must be nonnegative")
    output = _get(doc, "output", path, dict, {})
    out_dir = _get(output, "dir", f"{path}.output", str, "out")
    options = _get(doc, "options", path, dict, {})

    subs = []
    if experiment == "suite":
        entries = _get(doc, "scenarios", path, list)
        for i, entry in enumerate(entries):
            sub = dict(entry)
            sub.setdefault("seed", seed)
            sub.setdefault("output", {"dir": out_dir})
            subs.append(validate(sub, path=f"{path}.scenarios[{i}]"))
        return Scenario(experiment=experiment, seed=seed, model_cfg={},
                        initial_cfg={}, run_cfg={}, output_dir=out_dir,
                        options=options, sub_scenarios=subs, raw=doc)

    model_cfg = _get(doc, "model", path, dict)
    p = _get(model_cfg, "p", f"{path}.model", float)
    _expect(p > 0, f"{path}.model.p", "must be positive")
    source = _get(model_cfg, "source", f"{path}.model", dict)
    kind = _get(source, "kind", f"{path}.model.source", str)
    _expect(kind in ("constant", "kernel_inf", "kernel_p", "tabulated"),
            f"{path}.model.source.kind", f"unknown source kind {kind!r}")
    if kind in ("kernel_inf", "kernel_p"):
        name = _get(source, "kernel", f"{path}.model.source", str, "log")
        _expect(name in NAMED_KERNELS, f"{path}.model.source.kernel",
                f"must be one of {', '.join(NAMED_KERNELS)}")
    h_inf = _get(source, "h_inf", f"{path}.model.source", float, 1.0)
    _expect(h_inf > 0, f"{path}.model.source.h_inf", "must be positive")
    func = _get(model_cfg, "functional", f"{path}.model", dict, {})
    q = _get(func, "q", f"{path}.model.functional", float, 1.0)
    _expect(q > 0, f"{path}.model.functional.q", "must be positive")
    eps0 = _get(func, "eps0", f"{path}.model.functional", float, 1.0)
    _expect(eps0 > 0, f"{path}.model.functional.eps0", "must be positive")

    initial_cfg = _get(doc, "initial", path, dict, {"family": "equilibrium"})
    family = _get(initial_cfg, "family", f"{path}.initial", str, "equilibrium")
    _expect(family in ("equilibrium", "wrong_equilibrium", "scaled_equilibrium",
                       "perturbed_equilibrium"),
            f"{path}.initial.family", f"unknown family {family!r}")
    if family == "wrong_equilibrium":
        pp = _get(initial_cfg, "p_prime", f"{path}.initial", float)
        _expect(pp > 0, f"{path}.initial.p_prime", "must be positive")
    if family == "scaled_equilibrium":
        factor = _get(initial_cfg, "factor", f"{path}.initial", float)
        _expect(factor > 0, f"{path}.initial.factor", "must be positive")

    run_cfg = _get(doc, "run", path, dict, {})
    T = _get(run_cfg, "T", f"{path}.run", float, 10.0)
    dt = _get(run_cfg, "dt", f"{path}.run", float, p / 100.0)
    stride = _get(run_cfg, "stride", f"{path}.run", int, 1)
    _expect(T > 0, f"{path}.run.T", "must be positive")
    _expect(dt > 0, f"{path}.run.dt", "must be positive")
    _expect(stride >= 1, f"{path}.run.stride", "must be >= 1")
    run_cfg = {"T": T, "dt": dt, "stride": stride}

    return Scenario(experiment=experiment, seed=seed, model_cfg=model_cfg,
                    initial_cfg=initial_cfg, run_cfg=run_cfg, output_dir=out_dir,
                    options=options, raw=doc)


def load(path: str) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    return validate(doc)
