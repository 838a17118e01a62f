"""Command-line runner: ``acoilab <command> --config run.yaml [--out DIR]``.

Exit codes: 0 success, 2 configuration or model validation error, 3 failed
assumption check or convergence criterion.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import assumptions as av
from .config import ConfigError, RunConfig, build_model, load_config
from .discounted import dcoe_residual_norm, solve_dcoe
from .minpair import minimum_pair_search
from .model import DegenerateKernelError, DeterministicPolicy, MdpModel, evaluate_policy_average_cost, validate_model
from .oracles import policy_gain, relative_value_iteration
from .presets import DriftConditionError, ModelBuildError, build_preset, lq_reference_policy, preset_params
from .records import ResultRecord
from .report import FAIL, INCONCLUSIVE, AssumptionEntry, AssumptionReport
from .vanishing import default_anchor, extract_acoi_policy, run_vanishing_discount, solve_schedule

log = logging.getLogger("acoilab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3
COMMANDS = ("solve-discounted", "vanishing-discount", "verify", "minimum-pair", "evaluate")


class CommandFailure(Exception):
    """An assumption or convergence criterion failed (exit code 3)."""


# ---------------------------------------------------------------------------
# shared helpers


def prepare_model(cfg: RunConfig) -> MdpModel:
    model = build_model(cfg.model)
    report = validate_model(model)
    bad = report.violations
    if bad:
        e = bad[0]
        raise ConfigError(f"model.{e.condition}", f"model validation failed: {e.message} at {e.location}")
    return model


def _start_state(model: MdpModel, start, path: str = "start") -> int:
    if start is None:
        return default_anchor(model)
    if not isinstance(start, int) or not 0 <= start < model.n_states:
        raise ConfigError(path, f"start state must be an index in [0, {model.n_states})")
    return start


def _start_law(model: MdpModel, start, path: str) -> np.ndarray:
    if isinstance(start, list):
        p = np.asarray(start, dtype=float)
        if p.shape != (model.n_states,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise ConfigError(path, "initial law must be a probability vector over the states")
        return p
    p = np.zeros(model.n_states)
    p[_start_state(model, start, path)] = 1.0
    return p


def resolve_policy(model: MdpModel, cfg: RunConfig, spec, path: str) -> tuple[DeterministicPolicy, dict]:
    """Policy from a keyword (reference, first, acoi) or an explicit list of action indices."""
    info: dict = {"spec": spec if isinstance(spec, str) else "explicit"}
    if spec is None or spec == "reference":
        preset = model.meta.get("preset")
        if preset is not None and preset_params(preset)[0] == "lq":
            _, params = preset_params(preset, cfg.model.get("overrides"))
            return lq_reference_policy(params, model), info
        return DeterministicPolicy(model.first_admissible()), info
    if spec == "first":
        return DeterministicPolicy(model.first_admissible()), info
    if spec == "acoi":
        res = run_vanishing_discount(model, cfg.alphas, window=cfg.window, tol=cfg.tol_dcoe, floor=cfg.floor)
        pol = extract_acoi_policy(model, res.rho_star, res.h_lower, tol=cfg.tol_acoi)
        info.update(rho_star=res.rho_star, acoi_min=res.acoi_min)
        return pol, info
    if isinstance(spec, dict) and set(spec) == {"choice"}:
        spec = spec["choice"]
    if not isinstance(spec, list):
        raise ConfigError(path, "policy must be 'reference', 'first', 'acoi' or a list of action indices")
    choice = np.asarray(spec)
    if choice.shape != (model.n_states,) or not np.issubdtype(choice.dtype, np.integer):
        raise ConfigError(path, f"expected {model.n_states} integer action indices")
    for s, a in enumerate(choice):
        if not 0 <= a < model.n_actions or not model.admissible[s, a]:
            raise ConfigError(f"{path}[{s}]", f"action {int(a)} is not admissible at state {s}")
    return DeterministicPolicy(choice.astype(int)), info


def _opts(cfg: RunConfig, cid: str) -> dict:
    o = cfg.check_options.get(cid) or {}
    if not isinstance(o, dict):
        raise ConfigError(f"check_options.{cid}", "expected a mapping")
    return dict(o)


def _pop_unknown(o: dict, cid: str):
    if o:
        raise ConfigError(f"check_options.{cid}.{sorted(o)[0]}", "unknown option")


def _action_mask(model: MdpModel, o: dict, cid: str) -> np.ndarray:
    acts = o.pop("actions", "all")
    K = np.zeros((model.n_states, model.n_actions), dtype=bool)
    if acts == "all":
        K[:] = True
    else:
        try:
            K[:, list(acts)] = True
        except (IndexError, TypeError):
            raise ConfigError(f"check_options.{cid}.actions", "expected 'all' or a list of action indices") from None
    return K


def run_checks(model: MdpModel, cfg: RunConfig, ids) -> AssumptionReport:
    """Evaluate the requested condition ids; the discounted schedule is solved once, if needed."""
    report = AssumptionReport()
    cache: dict = {}

    def schedule():
        if "s" not in cache:
            cache["s"] = solve_schedule(model, cfg.alphas, tol=cfg.tol_dcoe, floor=cfg.floor)
        return cache["s"]

    w = model.weight.values if model.weight is not None else np.ones(model.n_states)
    for cid in ids:
        o = _opts(cfg, cid)
        if cid == av.UC_MODEL:
            lam, b = o.pop("lam", None), o.pop("b", None)
            _pop_unknown(o, cid)
            if model.weight is None:
                entry = AssumptionEntry(cid, FAIL, message="model has no weight function")
            else:
                entry, _ = av.check_uc_model(model, lam=lam, b=b)
        elif cid == av.DRIFT_EXPONENTIAL:
            kappa = o.pop("kappa", (model.meta.get("params") or {}).get("kappa"))
            _pop_unknown(o, cid)
            z = model.meta.get("z_laws")
            if z is None or kappa is None:
                entry = AssumptionEntry(cid, INCONCLUSIVE, message="model carries no continuous increment laws")
            else:
                entry, _ = av.check_drift_exponential({("*", a): law for a, law in z.items()}, float(kappa))
        elif cid == av.H_FAMILY_BOUNDED:
            anchor = o.pop("anchor", default_anchor(model))
            _pop_unknown(o, cid)
            entry = av.check_h_family_bounded(schedule(), w, anchor)
        elif cid == av.COMPACT_ACTION_INF:
            K = _action_mask(model, o, cid)
            eps = float(o.pop("eps", 0.01))
            _pop_unknown(o, cid)
            entry = av.check_compact_action_inf(model, schedule(), K, eps)
        elif cid in (av.MAJORIZATION, av.MAJORIZATION_BAND):
            K = _action_mask(model, o, cid)
            refs = o.pop("refinements", [])
            growth_tol = float(o.pop("growth_tol", 0.1))
            band = o.pop("band", None)
            _pop_unknown(o, cid)
            preset = model.meta.get("preset")
            if refs and preset is None:
                raise ConfigError(f"check_options.{cid}.refinements", "refinements need a preset model")
            base = dict(cfg.model.get("overrides") or {})
            try:
                refined = [build_preset(preset, {**base, **r}) for r in refs]
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"check_options.{cid}.refinements", str(exc)) from None
            if cid == av.MAJORIZATION:
                _, entry = av.check_majorization(model, K, "per_state", refinements=refined, growth_tol=growth_tol)
            else:
                if band is None:
                    raise ConfigError(f"check_options.{cid}.band", "global band needs {lo, hi} state bounds")
                c = model.grid.centers
                O = np.flatnonzero((c >= band["lo"]) & (c <= band["hi"]))
                _, entry = av.check_majorization(model, K, "global_band", O=O, refinements=refined,
                                                 growth_tol=growth_tol)
        elif cid == av.UNIFORM_INTEGRABILITY:
            K = _action_mask(model, o, cid)
            levels = o.pop("levels", None)
            tol = float(o.pop("tol", 1e-6))
            # the family is indexed by states up to x_max (default: lower half of the grid)
            c = model.grid.centers
            x_max = float(o.pop("x_max", 0.5 * (c[0] + c[-1])))
            _pop_unknown(o, cid)
            states = np.flatnonzero(c <= x_max)
            entry = av.check_uniform_integrability(model, w, K, levels, states=states, tol=tol)
            entry.constants["x_max"] = x_max
        elif cid == av.CONDITION_G:
            start = _start_state(model, o.pop("start", cfg.start), f"check_options.{cid}.start")
            pol, _ = resolve_policy(model, cfg, o.pop("policy", cfg.policy), f"check_options.{cid}.policy")
            horizon = int(o.pop("horizon", cfg.horizon))
            _pop_unknown(o, cid)
            entry = av.check_condition_G(model, pol, start, horizon)
        elif cid == av.CONDITION_B:
            variant = o.pop("variant", "liminf")
            _pop_unknown(o, cid)
            entry = av.check_condition_B(schedule(), variant)
        elif cid == av.SU_COERCIVITY:
            threshold = float(o.pop("threshold", 10.0))
            _pop_unknown(o, cid)
            if "K_n" not in model.meta:
                entry = AssumptionEntry(cid, INCONCLUSIVE, message="model defines no compact exhaustion")
            else:
                entry = av.check_su_coercivity(model, model.meta["K_n"], model.meta["A_n"], threshold)
        else:  # pragma: no cover - ids are validated with the config
            raise ConfigError("checks", f"unknown condition id {cid!r}")
        report.add(entry)
    return report


def _report_table(rec: ResultRecord, report: AssumptionReport):
    t = rec.table("assumption_report", ["condition", "status", "location", "margin", "message"])
    for e in report:
        t.add(e.condition, e.status, json.dumps(_loc(e.location)), e.margin, e.message)
    rec.outputs["report"] = report.to_dict()


def _loc(x):
    if isinstance(x, (tuple, list)):
        return [_loc(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


# ---------------------------------------------------------------------------
# commands


def cmd_solve_discounted(cfg: RunConfig, rec: ResultRecord, model: MdpModel):
    summary = rec.table("discounted_summary", ["alpha", "beta", "alpha_tilde", "method", "iterations",
                                               "residual_norm", "recomputed_residual", "certificate",
                                               "converged", "value_bound_margin"])
    values = rec.table("value_functions", ["state", "center"] + [f"v_alpha_{k}" for k in range(len(cfg.alphas))])
    failures, per_alpha, vs = [], [], []
    for alpha in cfg.alphas:
        sol = solve_dcoe(model, float(alpha), tol=cfg.tol_dcoe)
        rr = dcoe_residual_norm(model, sol)
        margin = None
        if model.model_class == "UC":
            uc, w = model.uc, model.weight.values
            bound = uc.c_hat * w / (1 - alpha * uc.lam) + uc.c_hat * uc.b / ((1 - alpha) * (1 - uc.lam))
            margin = float(np.min(bound - np.abs(sol.v)))
            if margin < 0:
                failures.append(f"value bound violated at alpha={alpha}")
        if not sol.converged or rr > cfg.tol_dcoe:
            failures.append(f"residual {rr:.3g} above tolerance at alpha={alpha}")
        summary.add(float(alpha), sol.beta, sol.alpha_tilde, sol.method, sol.iterations, sol.residual_norm, rr,
                    sol.certificate, sol.converged, margin)
        per_alpha.append({"alpha": float(alpha), "beta": sol.beta, "iterations": sol.iterations,
                          "residual_norm": sol.residual_norm, "recomputed_residual": rr,
                          "certificate": sol.certificate, "value_bound_margin": margin})
        vs.append(sol.v)
    for s in range(model.n_states):
        values.add(s, float(model.grid.centers[s]), *[float(v[s]) for v in vs])
    rec.outputs["per_alpha"] = per_alpha
    if failures:
        raise CommandFailure("; ".join(failures))


def _prerequisites(cfg: RunConfig, rec: ResultRecord, model: MdpModel):
    if not cfg.checks:
        return
    report = run_checks(model, cfg, cfg.checks)
    _report_table(rec, report)
    bad = [e for e in report if not e.passed]
    if bad and not rec.override_checks:
        raise CommandFailure(f"prerequisite check {bad[0].condition} did not pass: {bad[0].status} {bad[0].message}")
    if bad:
        rec.outputs["overridden_checks"] = [e.condition for e in bad]


def cmd_vanishing_discount(cfg: RunConfig, rec: ResultRecord, model: MdpModel):
    if len(cfg.alphas) < max(3, cfg.window):
        raise ConfigError("schedule.alphas", f"needs at least {max(3, cfg.window)} discount factors for the tail window")
    _prerequisites(cfg, rec, model)
    res = run_vanishing_discount(model, cfg.alphas, window=cfg.window, tol=cfg.tol_dcoe,
                                 spread_limit=cfg.spread_limit, floor=cfg.floor)
    series = rec.table("rho_series", ["alpha", "rho_estimate", "h_norm", "dcoe_residual"])
    for k, sol in enumerate(res.schedule.solutions):
        series.add(float(sol.alpha), float(res.rho_series[k]), float(res.h_norms[k]), sol.residual_norm)
    env = rec.table("envelopes", ["state", "center", "h_lower", "h_upper", "acoi_residual", "reverse_residual"])
    for s in range(model.n_states):
        env.add(s, float(model.grid.centers[s]), float(res.h_lower[s]), float(res.h_upper[s]),
                float(res.acoi_residuals[s]), float(res.reverse_residuals[s]))
    ref = {k: v for k, v in res.reference.items() if k in ("kind", "anchor")}
    rec.outputs.update(rho_star=res.rho_star, rho_spread=res.rho_spread, rho_converged=res.rho_converged,
                       acoi_min=res.acoi_min, reverse_min=res.reverse_min, acoe_gap=res.acoe_gap,
                       envelope_spread=res.envelope_spread, full_vs_tail_gap=res.full_vs_tail_gap,
                       unattained_states=res.unattained_states, reference=ref, window=res.window,
                       h_norms=res.h_norms)
    problems = []
    if not res.acoi_min >= -cfg.tol_acoi:
        problems.append(f"ACOI residual {res.acoi_min:.3g} below -{cfg.tol_acoi:g}")
    if not res.rho_converged:
        problems.append(f"rho* spread {res.rho_spread:.3g} above limit {cfg.spread_limit:g}")
    if problems:
        raise CommandFailure("; ".join(problems))


def cmd_verify(cfg: RunConfig, rec: ResultRecord, model: MdpModel):
    if not cfg.checks:
        raise ConfigError("checks", "no condition ids requested")
    report = run_checks(model, cfg, cfg.checks)
    _report_table(rec, report)
    bad = [e.condition for e in report if not e.passed]
    if bad:
        raise CommandFailure(f"check(s) not passed: {', '.join(bad)}")


def cmd_minimum_pair(cfg: RunConfig, rec: ResultRecord, model: MdpModel):
    specs = cfg.seeds or [{"policy": cfg.policy, "start": cfg.start}]
    seeds = []
    for i, s in enumerate(specs):
        pol, _ = resolve_policy(model, cfg, s.get("policy"), f"seeds[{i}].policy")
        seeds.append((pol, _start_law(model, s.get("start"), f"seeds[{i}].start")))
    try:
        res = minimum_pair_search(model, seeds, tol=1e-9)
    except ValueError as exc:
        raise CommandFailure(str(exc)) from None
    t = rec.table("seeds", ["seed", "status", "seed_cost", "pair_cost", "residual", "reason"])
    for row in res.seed_table:
        t.add(row["seed"], row["status"], row.get("seed_cost"), row.get("pair_cost"), row.get("residual"),
              row.get("reason", ""))
    pair = res.pair
    pt = rec.table("pair", ["state", "center", "marginal", "action_index", "action_value", "action_mass"])
    for s in range(model.n_states):
        a = int(np.argmax(pair.policy[s]))
        pt.add(s, float(model.grid.centers[s]), float(pair.state_marginal[s]), a,
               float(model.actions.values[a]), float(pair.policy[s, a]))
    oracle = {"regime": res.regime, "sweep_cost": res.sweep_cost, "n_policies": res.n_policies}
    if res.regime != "exhaustive":
        rvi = relative_value_iteration(model, max_iter=200_000)
        oracle.update(rvi_gain=rvi.gain, rvi_span=rvi.span, rvi_converged=rvi.converged)
    st = rec.table("pair_summary", ["quantity", "value"])
    st.add("pair_cost", pair.cost)
    st.add("invariance_residual", pair.invariance_residual)
    st.add("regime", res.regime)
    for k in ("sweep_cost", "rvi_gain"):
        if oracle.get(k) is not None:
            st.add(k, oracle[k])
    rec.outputs.update(pair_cost=pair.cost, invariance_residual=pair.invariance_residual,
                       seed_costs=[r.get("seed_cost") for r in res.seed_table], oracle=oracle)


def cmd_evaluate(cfg: RunConfig, rec: ResultRecord, model: MdpModel, policy_spec):
    pol, info = resolve_policy(model, cfg, policy_spec, "policy")
    start = _start_state(model, cfg.start)
    horizons = [2**k for k in range(int(math.log2(cfg.horizon)) + 1)]
    t = rec.table("trend", ["horizon", "average_cost_at_start", "max_over_states", "min_over_states"])
    last = None
    for n in horizons:
        J = evaluate_policy_average_cost(model, pol, n)
        t.add(n, float(J[start]), float(J.max()), float(J.min()))
        last = float(J[start])
    gain = policy_gain(model, pol.choice)
    rec.outputs.update(policy=info, start=start, trend_final=last, limit_gain=float(gain[start]),
                       choice=pol.choice)
    if "rho_star" in info:
        eps = max(cfg.epsilons)
        bound = info["rho_star"] + eps + cfg.tol_acoi
        rec.outputs["optimality_bound"] = bound
        if gain[start] > bound:
            raise CommandFailure(f"extracted policy cost {gain[start]:.6g} exceeds rho* + eps + tol = {bound:.6g}")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acoilab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (default: output.directory from the config)")
        p.add_argument("--override-checks", action="store_true", help="run even if prerequisite checks fail")
        p.add_argument("--seed", type=int, default=None, help="recorded only; the pipeline is deterministic")
        p.add_argument("--threads", type=int, default=1, help="BLAS thread limit")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument("--policy", help="policy file (YAML/JSON list of action indices or a keyword)")
    return parser


def _load_policy_file(path: str):
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError("--policy", f"cannot read policy file: {exc}") from None
    if isinstance(data, dict) and set(data) == {"policy"}:
        data = data["policy"]
    return data


def run(argv=None) -> tuple[int, ResultRecord | None]:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG, None
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG, None
    t0 = time.perf_counter()
    rec = None
    try:
        if not Path(args.config).is_file():
            raise ConfigError("--config", f"file not found: {args.config}")
        cfg = load_config(Path(args.config))
        rec = ResultRecord(args.command, cfg.config_hash, override_checks=args.override_checks, seed=args.seed)
        with threadpool_limits(limits=args.threads):
            model = prepare_model(cfg)
            rec.outputs["model"] = {"name": model.name, "class": model.model_class, "states": model.n_states,
                                    "actions": model.n_actions}
            if args.command == "solve-discounted":
                cmd_solve_discounted(cfg, rec, model)
            elif args.command == "vanishing-discount":
                cmd_vanishing_discount(cfg, rec, model)
            elif args.command == "verify":
                cmd_verify(cfg, rec, model)
            elif args.command == "minimum-pair":
                cmd_minimum_pair(cfg, rec, model)
            else:
                spec = _load_policy_file(args.policy) if args.policy else cfg.policy
                cmd_evaluate(cfg, rec, model, spec)
        code, msg = EXIT_OK, ""
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except (DriftConditionError, CommandFailure) as exc:
        code, msg = EXIT_FAILURE, f"failed: {exc}"
    except (ModelBuildError, DegenerateKernelError) as exc:
        code, msg = EXIT_CONFIG, f"model error: {exc}"
    if msg:
        print(msg, file=sys.stderr)
    if rec is not None:
        rec.exit_code = code
        rec.status = {EXIT_OK: "ok", EXIT_CONFIG: "config_error", EXIT_FAILURE: "failed"}[code]
        if msg:
            rec.outputs["error"] = msg
        rec.wall_clock = time.perf_counter() - t0
        out = args.out or cfg.out_dir
        if out:
            rec.write(out, cfg.formats)
        for t in rec.tables:
            if len(t.rows) <= 40:
                print(t.to_text())
        print(f"{rec.command}: {rec.status} (exit {code})")
    return code, rec


def main(argv=None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
