import math

import numpy as np
import pytest

from acoilab.assumptions import check_majorization, check_su_coercivity, check_uc_model
from acoilab.cli import run_checks
from acoilab.config import load_config
from acoilab.oracles import policy_gain
from acoilab.presets import (
    PRESETS,
    DamModelParams,
    DriftConditionError,
    LqModelParams,
    ModelBuildError,
    build_dam_model,
    build_lq_model,
    build_micro_oracles,
    build_preset,
    dam_cost,
    lq_reference_action,
    lq_reference_policy,
    preset_params,
)
from acoilab.report import PASS


# ---------------------------------------------------------------------------
# dam model


def test_dam_default_is_uc_with_exponential_weight(dam):
    p = DamModelParams()
    assert dam.model_class == "UC"
    assert np.allclose(dam.weight.values, np.exp(p.kappa * dam.grid.centers), rtol=1e-15)
    assert dam.uc.lam < 1
    assert dam.meta["drift_lambda"] < 1


def test_dam_cost_dominated_by_weight(dam):
    p = DamModelParams()
    bound = p.c_hat * np.exp(p.kappa * dam.grid.centers)
    assert np.all(np.abs(dam.c) <= bound[:, None] * (1 + 1e-12))
    assert np.array_equal(dam.c[:, 2], dam_cost(p, dam.grid.centers, 0.5))


def test_dam_atom_matches_monte_carlo(dam):
    # P([x + eta - xi]^+ = 0) by simulation, 1e6 draws per spot check
    rng = np.random.default_rng(7)
    p = DamModelParams()
    n = 1_000_000
    for s in (0, 10, 20, 30):
        for a_idx in (0, 4):
            x, a = dam.grid.centers[s], p.actions[a_idx]
            eta = rng.uniform(0.0, 0.5 + 0.1 * a, n)
            xi = rng.uniform(0.5, 1.5, n)
            hit = np.mean(x + eta - xi <= 0)
            se = math.sqrt(max(hit * (1 - hit), 1e-12) / n)
            got = dam.kernel.atoms[s, a_idx, 0]
            assert abs(got - hit) <= 3 * se + 1e-6, (s, a_idx, got, hit, se)


def test_dam_atom_vanishes_far_from_zero(dam):
    s = int(np.searchsorted(dam.grid.centers, 2.0))
    assert np.all(dam.kernel.atoms[s:, :, 0] == 0)


def test_dam_example_single_action():
    p = DamModelParams(kappa=1.0, actions=(0.0,), inflow_family="constant", inflow_params=(0.0,),
                       outflow_params=(0.0, 1.0))
    m = build_dam_model(p)
    assert m.meta["drift_lambda"] == pytest.approx(1 - math.exp(-1), rel=1e-12)
    assert m.uc.lam < 1


def test_dam_sabotage_rejected():
    # zero-mean increment: E exp(kappa Z) >= exp(kappa E Z) = 1
    p = DamModelParams(inflow_params=(0.0, 1.0, 0.0), outflow_params=(0.0, 1.0))
    with pytest.raises(DriftConditionError):
        build_dam_model(p)


def test_dam_large_kappa_rejected():
    # a wide outflow keeps the mean negative while the mgf at large kappa exceeds 1
    p = DamModelParams(kappa=6.0, inflow_params=(0.0, 1.0, 0.0), outflow_params=(0.0, 1.2))
    with pytest.raises(DriftConditionError):
        build_dam_model(p)


def test_dam_invalid_params():
    with pytest.raises(ModelBuildError):
        DamModelParams(kappa=0.0)
    with pytest.raises(ModelBuildError):
        DamModelParams(actions=(-1.0, 0.0))
    with pytest.raises(ModelBuildError):
        DamModelParams(variant="other")
    with pytest.raises(ModelBuildError):
        # bounded_inflow needs bounded inflow
        build_dam_model(DamModelParams(inflow_family="normal", inflow_params=(0.2, 0.0, 0.1)))


def test_dam_light_tail_rejects_slow_decay():
    p = DamModelParams(inflow_family="laplace", inflow_params=(0.1, 0.0, 1.5), variant="light_tail")
    with pytest.raises(ModelBuildError):
        build_dam_model(p)


def test_dam_b_passes_relative_value_conditions():
    cfg = load_config({"model": {"preset": "dam_b_default"},
                       "checks": ["uc_model", "drift_exponential", "h_family_bounded", "compact_action_inf",
                                  "majorization", "uniform_integrability"]})
    model = build_preset("dam_b_default")
    report = run_checks(model, cfg, cfg.checks)
    assert report.all_passed, [(e.condition, e.status, e.message) for e in report]


# ---------------------------------------------------------------------------
# LQ model


@pytest.mark.parametrize("x, expected", [(0.7, -0.5), (0.0, 0.0), (-1.2, 1.0), (0.25, 0.0), (2.0, -2.0)])
def test_lq_reference_action(x, expected):
    assert lq_reference_action(x, 0.5) == expected


def test_lq_reference_policy_stays_near_origin(lq):
    pol = lq_reference_policy(model=lq)
    x = lq.grid.centers
    a = lq.actions.values[pol.choice]
    assert np.all(np.abs(a) <= np.abs(x) + 1e-12)
    assert np.all(np.abs(x + a) <= LqModelParams().delta / 2 + 1e-12)


def test_lq_is_pc_with_quadratic_costs(lq):
    p = LqModelParams()
    x, a = lq.grid.centers, lq.actions.values
    assert lq.model_class == "PC"
    expected = p.beta(x)[:, None] * (x[:, None] ** 2 + a[None, :] ** 2)
    assert np.array_equal(lq.c, expected)
    assert np.allclose(a / p.delta, np.round(a / p.delta), atol=1e-12)


def test_lq_exhaustion_sets(lq):
    x = lq.grid.centers
    for n, K in enumerate(lq.meta["K_n"], start=1):
        assert np.all(np.abs(x[K]) <= n + 1e-12)
    assert all(len(a) < len(b) for a, b in zip(lq.meta["K_n"], lq.meta["K_n"][1:]))


def test_lq_unit_beta_su_passes():
    m = build_lq_model(LqModelParams(delta=0.5, beta_breaks=(), beta_levels=(1.0,), noise_cut=2.0))
    assert check_su_coercivity(m, m.meta["K_n"], m.meta["A_n"]).status == PASS


def test_lq_step_in_beta_builds():
    p = LqModelParams(beta_breaks=(1.0,), beta_levels=(0.5, 3.0))
    m = build_lq_model(p)
    x = m.grid.centers
    inner, outer = np.abs(x) < 1.0, np.abs(x) > 1.0
    assert np.all(m.c[outer, 0] / (x[outer] ** 2 + m.actions.values[0] ** 2) == 3.0)
    assert np.all(m.c[inner, 0] / (x[inner] ** 2 + m.actions.values[0] ** 2) == 0.5)


def test_lq_invalid_params():
    with pytest.raises(ModelBuildError):
        LqModelParams(delta=0.0)
    with pytest.raises(ModelBuildError):
        LqModelParams(beta_breaks=(1.0,), beta_levels=(1.0,))
    with pytest.raises(ModelBuildError):
        LqModelParams(beta_breaks=(1.0,), beta_levels=(1.0, 0.0))
    with pytest.raises(ModelBuildError):
        LqModelParams(beta_breaks=(2.0, 1.0), beta_levels=(1.0, 1.0, 1.0))


def test_lq_reference_bound_monotone_in_delta():
    deltas = [1.0, 0.5, 0.25, 0.125, 0.0625]
    bounds = [LqModelParams(delta=d).reference_bound for d in deltas]
    assert all(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:]))


def test_lq_reference_policy_cost_within_bound(lq):
    p = LqModelParams()
    pol = lq_reference_policy(p, lq)
    start = int(np.argmin(np.abs(lq.grid.centers)))
    assert policy_gain(lq, pol.choice)[start] <= p.reference_bound + 1e-3


def test_lq_lebesgue_band_majorizes(lq):
    # densities bounded by l: nu = l * Lebesgue on an interval O, no atoms
    ell = lq.meta["density_bound"]
    x = lq.grid.centers
    O = np.flatnonzero(np.abs(x) <= 3.0)
    measure, e = check_majorization(lq, None, "global_band", O=O)
    assert e.status == PASS
    widths = lq.grid.widths[O]
    cap = measure.cell_total(lq.grid)[O]
    assert np.all(cap <= ell * widths * (1 + 1e-9))


# ---------------------------------------------------------------------------
# micro-oracles and registry


def test_micro_oracles_closed_forms():
    ms = {m.name: m for m in build_micro_oracles()}
    assert ms["single_state"].meta["g_star"] == 3.0
    assert ms["two_cycle"].meta["g_star"] == 2.0
    assert ms["stay_cheap"].meta["g_star"] == 1.0
    for name in ("single_state", "two_cycle", "stay_cheap", "swap_chain", "mixing_pair", "zero_cost"):
        m = ms[name]
        best = min(policy_gain(m, np.array(ch)).min()
                   for ch in np.ndindex(*([m.n_actions] * m.n_states))
                   if all(m.admissible[s, a] for s, a in enumerate(ch)))
        assert best == pytest.approx(m.meta["g_star"], abs=1e-12), name


def test_every_preset_builds():
    for name in PRESETS:
        m = build_preset(name)
        assert m.meta["preset"] == name
        assert np.allclose(m.probs.sum(axis=2)[m.admissible], 1.0, atol=1e-12)


def test_preset_overrides():
    m = build_preset("dam_a_default", {"cells": 60})
    assert m.n_states == 60
    with pytest.raises(ValueError):
        preset_params("dam_a_default", {"no_such_field": 1})
    with pytest.raises(ValueError):
        preset_params("two_cycle", {"c0": 2.0})
    with pytest.raises(KeyError):
        preset_params("missing")
