"""Run configuration and model definition files (YAML).

Schema (all sections optional except ``model``)::

    model:        {preset: NAME, overrides: {...}}  or an inline model definition
    schedule:     {alphas: [...]} or {alpha0: 0.9, n: 20}; optional floor
    tolerance:    {dcoe, acoi, reverse, spread_limit, window, epsilon}
    checks:       [condition ids]
    check_options: {majorization: {...}, uniform_integrability: {...}, ...}
    seeds:        [{policy: reference|first|acoi|[indices], start: index | [probabilities]}]
    policy:       reference|first|acoi|[indices]
    start:        state index used by evaluate / condition (G)
    output:       {directory: path, formats: [json, csv]}

An inline model definition has keys ``grid``, ``actions``, ``admissible``,
``kernel``, ``cost``, ``model_class``, ``weight`` and ``name``.  Unknown keys
anywhere are errors naming the offending field path.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .assumptions import CONDITION_IDS, check_uc_model
from .distributions import Laplace, Normal, Uniform
from .model import (
    ActionStructure,
    CostTable,
    DiscreteKernel,
    KernelSource,
    MdpModel,
    StateGrid,
    WeightVector,
    discretize_density_kernel,
)
from .presets import PRESETS, DriftConditionError, build_preset, preset_params
from .vanishing import DEFAULT_ALPHA0, DEFAULT_FLOOR, DEFAULT_N, DEFAULT_WINDOW, default_alphas, validate_alphas


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


TOP_KEYS = {"model", "schedule", "tolerance", "checks", "check_options", "seeds", "policy", "start", "horizon",
            "output"}
SCHEDULE_KEYS = {"alphas", "alpha0", "n", "floor"}
TOL_KEYS = {"dcoe", "acoi", "reverse", "spread_limit", "window", "epsilon"}
OUTPUT_KEYS = {"directory", "formats"}
MODEL_KEYS = {"preset", "overrides", "grid", "actions", "admissible", "kernel", "cost", "model_class", "weight", "name"}
GRID_KEYS = {"lo", "hi", "cells", "boundary_mode"}
KERNEL_KEYS = {"tensor", "density", "params", "positive_part"}
COST_KEYS = {"table", "expression", "params"}
WEIGHT_KEYS = {"expression", "kappa", "values"}
CHECK_OPTION_KEYS = set(CONDITION_IDS)


@dataclass
class RunConfig:
    model: dict
    alphas: np.ndarray
    floor: float = DEFAULT_FLOOR
    tol_dcoe: float = 1e-9
    tol_acoi: float = 1e-3
    tol_reverse: float = 1e-3
    spread_limit: float | None = None
    window: int = DEFAULT_WINDOW
    epsilons: tuple = (0.1, 0.01)
    checks: list = field(default_factory=list)
    check_options: dict = field(default_factory=dict)
    seeds: list | None = None
    policy: Any = None
    start: int | None = None
    horizon: int = 4096
    out_dir: str | None = None
    formats: tuple = ("json", "csv")
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, default=str)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def _reject_unknown(d: dict, allowed: set, path: str):
    if not isinstance(d, dict):
        raise ConfigError(path, f"expected a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], f"unknown field (allowed: {sorted(allowed)})")


def _num(x, path: str, cast=float):
    try:
        return cast(x)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {x!r}") from None


def load_config(source) -> RunConfig:
    """Parse a ``Path``, YAML text or an already-loaded mapping."""
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = source.read_text() if isinstance(source, Path) else str(source)
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"YAML parse error: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return parse_config(raw)


def parse_config(raw: dict) -> RunConfig:
    _reject_unknown(raw, TOP_KEYS, "")
    if "model" not in raw:
        raise ConfigError("model", "missing required section")
    model = raw["model"]
    _reject_unknown(model, MODEL_KEYS, "model")
    if "preset" in model:
        if model["preset"] not in PRESETS:
            raise ConfigError("model.preset", f"unknown preset {model['preset']!r}")
        extra = set(model) - {"preset", "overrides"}
        if extra:
            raise ConfigError(f"model.{sorted(extra)[0]}", "inline model fields cannot be combined with a preset")
        try:
            preset_params(model["preset"], model.get("overrides"))
        except (ValueError, TypeError) as exc:
            raise ConfigError("model.overrides", str(exc)) from None

    sched = raw.get("schedule", {}) or {}
    _reject_unknown(sched, SCHEDULE_KEYS, "schedule")
    floor = _num(sched.get("floor", DEFAULT_FLOOR), "schedule.floor")
    if "alphas" in sched:
        if not isinstance(sched["alphas"], list):
            raise ConfigError("schedule.alphas", "expected a list")
        alphas = np.array([_num(a, f"schedule.alphas[{i}]") for i, a in enumerate(sched["alphas"])])
    else:
        alpha0 = _num(sched.get("alpha0", DEFAULT_ALPHA0), "schedule.alpha0")
        n = _num(sched.get("n", DEFAULT_N), "schedule.n", int)
        if not 0 < alpha0 < 1:
            raise ConfigError("schedule.alpha0", "must lie strictly between 0 and 1")
        if n < 0:
            raise ConfigError("schedule.n", "must be nonnegative")
        alphas = default_alphas(alpha0, n)
    try:
        validate_alphas(alphas, floor)
    except ValueError as exc:
        raise ConfigError("schedule.alphas", str(exc)) from None

    tol = raw.get("tolerance", {}) or {}
    _reject_unknown(tol, TOL_KEYS, "tolerance")
    eps = tol.get("epsilon", [0.1, 0.01])
    eps = tuple(_num(e, "tolerance.epsilon") for e in (eps if isinstance(eps, list) else [eps]))
    if any(e <= 0 for e in eps):
        raise ConfigError("tolerance.epsilon", "must be positive")
    window = _num(tol.get("window", DEFAULT_WINDOW), "tolerance.window", int)
    if window < 1:
        raise ConfigError("tolerance.window", "must be at least 1")

    checks = raw.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigError("checks", "expected a list of condition ids")
    for i, c in enumerate(checks):
        if c not in CONDITION_IDS:
            raise ConfigError(f"checks[{i}]", f"unknown condition id {c!r}")
    opts = raw.get("check_options", {}) or {}
    _reject_unknown(opts, CHECK_OPTION_KEYS, "check_options")

    out = raw.get("output", {}) or {}
    _reject_unknown(out, OUTPUT_KEYS, "output")
    formats = tuple(out.get("formats", ["json", "csv"]))
    for f in formats:
        if f not in ("json", "csv"):
            raise ConfigError("output.formats", f"unknown format {f!r}")

    seeds = raw.get("seeds")
    if seeds is not None:
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "expected a nonempty list")
        for i, s in enumerate(seeds):
            _reject_unknown(s, {"policy", "start"}, f"seeds[{i}]")
    horizon = _num(raw.get("horizon", 4096), "horizon", int)
    if horizon < 1:
        raise ConfigError("horizon", "must be at least 1")
    spread = tol.get("spread_limit")
    return RunConfig(
        model=model, alphas=alphas, floor=floor,
        tol_dcoe=_num(tol.get("dcoe", 1e-9), "tolerance.dcoe"),
        tol_acoi=_num(tol.get("acoi", 1e-3), "tolerance.acoi"),
        tol_reverse=_num(tol.get("reverse", 1e-3), "tolerance.reverse"),
        spread_limit=None if spread is None else _num(spread, "tolerance.spread_limit"),
        window=window, epsilons=eps, checks=list(checks), check_options=opts, seeds=seeds,
        policy=raw.get("policy"), start=raw.get("start"), horizon=horizon, out_dir=out.get("directory"), formats=formats, raw=raw,
    )


# ---------------------------------------------------------------------------
# model definitions


DENSITY_FAMILIES = {"normal", "laplace", "uniform"}
COST_EXPRESSIONS = {"quadratic", "linear", "zero"}


def build_model(spec: dict) -> MdpModel:
    """Build a model from the ``model`` section (preset or inline definition)."""
    if "preset" in spec:
        return build_preset(spec["preset"], spec.get("overrides"))
    return model_from_definition(spec)


def model_from_definition(spec: dict, path: str = "model") -> MdpModel:
    _reject_unknown(spec, MODEL_KEYS - {"preset", "overrides"}, path)
    for key in ("grid", "actions", "kernel", "cost"):
        if key not in spec:
            raise ConfigError(f"{path}.{key}", "missing required field")
    g = spec["grid"]
    _reject_unknown(g, GRID_KEYS, f"{path}.grid")
    try:
        grid = StateGrid.uniform(_num(g["lo"], f"{path}.grid.lo"), _num(g["hi"], f"{path}.grid.hi"),
                                 _num(g["cells"], f"{path}.grid.cells", int), g.get("boundary_mode", "truncate_renormalize"))
    except KeyError as exc:
        raise ConfigError(f"{path}.grid.{exc.args[0]}", "missing required field") from None
    except ValueError as exc:
        raise ConfigError(f"{path}.grid", str(exc)) from None
    S = len(grid)
    actions = np.array([_num(a, f"{path}.actions") for a in spec["actions"]])
    A = len(actions)
    if "admissible" in spec:
        adm = np.asarray(spec["admissible"], dtype=bool)
        if adm.shape != (S, A):
            raise ConfigError(f"{path}.admissible", f"expected a {S}x{A} table")
    else:
        adm = np.ones((S, A), dtype=bool)
    acts = ActionStructure(actions, adm)

    k = spec["kernel"]
    _reject_unknown(k, KERNEL_KEYS, f"{path}.kernel")
    source = None
    if "tensor" in k:
        P = np.asarray(k["tensor"], dtype=float)
        if P.shape != (S, A, S):
            raise ConfigError(f"{path}.kernel.tensor", f"expected shape {(S, A, S)}, got {P.shape}")
        kernel = DiscreteKernel(P)
    elif "density" in k:
        kernel, source = _density_kernel(k, grid, acts, f"{path}.kernel")
    else:
        raise ConfigError(f"{path}.kernel", "needs 'tensor' or 'density'")

    cls = spec.get("model_class", "PC")
    if cls not in ("PC", "UC"):
        raise ConfigError(f"{path}.model_class", "must be PC or UC")
    costs = _cost_table(spec["cost"], grid, actions, f"{path}.cost")
    weight = _weight(spec.get("weight"), grid, f"{path}.weight")
    model = MdpModel(grid, acts, kernel, CostTable(costs, cls), weight, None, name=spec.get("name", "custom"),
                     source=source)
    if cls == "UC":
        if weight is None:
            raise ConfigError(f"{path}.weight", "UC models need a weight")
        entry, uc = check_uc_model(model)
        if uc is None:
            raise DriftConditionError(f"no drift constants fit the model: {entry.message}")
        model.uc = uc
    return model


def _density_kernel(k: dict, grid: StateGrid, acts: ActionStructure, path: str):
    fam = k["density"]
    if fam not in DENSITY_FAMILIES:
        raise ConfigError(f"{path}.density", f"unknown density {fam!r} (known: {sorted(DENSITY_FAMILIES)})")
    params = dict(k.get("params", {}))
    gain = float(params.pop("action_gain", 1.0))
    drift = float(params.pop("drift", 0.0))
    try:
        if fam == "normal":
            law = Normal(0.0, float(params.pop("sd")))
        elif fam == "laplace":
            law = Laplace(0.0, float(params.pop("scale")))
        else:
            law = Uniform(float(params.pop("lo")), float(params.pop("hi")))
    except KeyError as exc:
        raise ConfigError(f"{path}.params.{exc.args[0]}", "missing parameter") from None
    if params:
        raise ConfigError(f"{path}.params.{sorted(params)[0]}", "unknown parameter")
    positive = bool(k.get("positive_part", False))

    def density(x, a, ys):
        ys = np.asarray(ys, dtype=float)
        d = law.pdf(ys - x - gain * a - drift)
        return np.where(ys > 0, d, 0.0) if positive else d

    def atoms(x, a):
        return [(0.0, float(law.cdf(np.array([-x - gain * a - drift]))[0]))] if positive else []

    def tail_mass(x, a):
        m = x + gain * a + drift
        below = 0.0 if positive else float(law.cdf(np.array([grid.lo - m]))[0])
        return below, float(1 - law.cdf(np.array([grid.hi - m]))[0])

    kernel = discretize_density_kernel(density, atoms, grid, acts,
                                       tail_mass if grid.boundary_mode == "absorb_edge" else None)
    return kernel, KernelSource(density, atoms, tail_mass, law.density_bound)


def _cost_table(c: dict, grid: StateGrid, actions: np.ndarray, path: str) -> np.ndarray:
    _reject_unknown(c, COST_KEYS, path)
    S, A = len(grid), len(actions)
    if "table" in c:
        t = np.asarray(c["table"], dtype=float)
        if t.shape != (S, A):
            raise ConfigError(f"{path}.table", f"expected a {S}x{A} table")
        return t
    expr = c.get("expression")
    if expr not in COST_EXPRESSIONS:
        raise ConfigError(f"{path}.expression", f"unknown cost expression {expr!r}")
    p = dict(c.get("params", {}))
    x = grid.centers[:, None]
    a = actions[None, :]
    if expr == "zero":
        out = np.zeros((S, A))
    elif expr == "linear":
        out = p.pop("c0", 0.0) + p.pop("cx", 1.0) * x + p.pop("ca", 0.0) * a + 0 * a
    else:
        out = p.pop("qx", 1.0) * x**2 + p.pop("qa", 1.0) * a**2
    if p:
        raise ConfigError(f"{path}.params.{sorted(p)[0]}", "unknown parameter")
    return np.broadcast_to(out, (S, A)).astype(float)


def _weight(w, grid: StateGrid, path: str):
    if w is None:
        return None
    _reject_unknown(w, WEIGHT_KEYS, path)
    if "values" in w:
        v = np.asarray(w["values"], dtype=float)
        if v.shape != (len(grid),):
            raise ConfigError(f"{path}.values", "length must match the grid")
        return WeightVector(v)
    expr = w.get("expression", "one")
    if expr == "one":
        return WeightVector(np.ones(len(grid)))
    if expr == "exp":
        kappa = _num(w.get("kappa", 1.0), f"{path}.kappa")
        return WeightVector(np.exp(kappa * np.abs(grid.centers)))
    raise ConfigError(f"{path}.expression", f"unknown weight expression {expr!r}")
