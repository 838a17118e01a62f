import math

import numpy as np
import pytest

from acoilab.assumptions import (
    check_compact_action_inf,
    check_condition_B,
    check_condition_G,
    check_drift_exponential,
    check_h_family_bounded,
    check_majorization,
    check_su_coercivity,
    check_uc_model,
    check_uniform_integrability,
    continuum_majorant_mass,
    uniform_integrability_tails,
)
from acoilab.distributions import Laplace
from acoilab.model import (
    ActionStructure,
    CostTable,
    DeterministicPolicy,
    KernelSource,
    MdpModel,
    StateGrid,
    WeightVector,
    discretize_density_kernel,
)
from acoilab.presets import (
    DamModelParams,
    build_dam_model,
    build_gaussian_family,
    build_preset,
    build_shift_model,
    lq_reference_policy,
)
from acoilab.report import FAIL, INCONCLUSIVE, PASS
from acoilab.vanishing import solve_schedule

from conftest import finite_model


# ---------------------------------------------------------------------------
# weighted-norm model class


def test_uc_identity_kernel():
    P = np.zeros((3, 2, 3))
    for s in range(3):
        P[s, :, s] = 1.0
    c = np.array([[1.0, -4.0], [2.0, 0.5], [3.0, 3.5]])
    entry, uc = check_uc_model(finite_model(P, c, model_class="UC", weight=np.ones(3)), np.ones(3))
    assert entry.status == PASS
    assert (uc.lam, uc.b, uc.c_hat) == (0.0, 1.0, 4.0)


def test_uc_fitted_constants_hold_pointwise(dam):
    w = dam.weight.values
    Ew = np.where(dam.admissible, dam.probs @ w, -np.inf).max(axis=1)
    assert np.all(Ew <= dam.uc.lam * w + dam.uc.b)
    assert np.all(np.abs(np.where(dam.admissible, dam.c, 0.0)) <= dam.uc.c_hat * w[:, None] * (1 + 1e-15))


def test_uc_supplied_constants(dam):
    entry, uc = check_uc_model(dam, lam=dam.uc.lam, b=dam.uc.b)
    assert entry.status == PASS and uc is not None
    entry, uc = check_uc_model(dam, lam=0.0, b=0.0)
    assert entry.status == FAIL and uc is None


def test_uc_doubling_kernel_is_inconclusive():
    # E w(next) = 2 w(x) below the top cell; only the truncation keeps b finite
    S = 10
    P = np.zeros((S, 1, S))
    for s in range(S):
        P[s, 0, min(s + 1, S - 1)] = 1.0
    w = 2.0 ** np.arange(S)
    entry, uc = check_uc_model(finite_model(P, np.ones((S, 1)), model_class="UC", weight=w), w)
    assert entry.status == INCONCLUSIVE and uc is None
    assert entry.constants["reason"] == "truncation"


def test_dam_example_drift_b_one():
    # eta = 0, xi ~ U[0, 1], kappa = 1, single action 0: lambda = E exp(-xi) = 1 - 1/e
    lams = []
    for cells in (120, 1200):
        p = DamModelParams(kappa=1.0, actions=(0.0,), inflow_family="constant", inflow_params=(0.0,),
                           outflow_params=(0.0, 1.0), cells=cells)
        m = build_dam_model(p)
        assert m.meta["drift_lambda"] == pytest.approx(1 - math.exp(-1), rel=1e-12)
        w = m.weight.values
        lam_grid = float(np.max((m.probs[:, 0] @ w - 1.0) / w))
        entry, _ = check_uc_model(m, lam=lam_grid, b=1.0)
        assert entry.status == PASS and lam_grid < 1
        lams.append(lam_grid)
    # the grid-level constant approaches the continuum value under refinement
    assert abs(lams[1] - (1 - math.exp(-1))) < abs(lams[0] - (1 - math.exp(-1)))
    assert abs(lams[1] - (1 - math.exp(-1))) < 0.01


# ---------------------------------------------------------------------------
# relative-value conditions


def test_h_family_single_state(micro_runs):
    e = check_h_family_bounded(micro_runs["single_state"].schedule, np.ones(1), 0)
    assert e.status == PASS and e.constants["sup"] == 0


def test_h_family_two_cycle(micro_runs):
    e = check_h_family_bounded(micro_runs["two_cycle"].schedule, np.ones(2), 0)
    assert e.status == PASS
    # h_alpha(1) = 2 / (1 + alpha) -> 1
    assert e.constants["tail"] == pytest.approx(1.0, abs=1e-6)


def test_h_family_disconnected_fails(micro_runs):
    e = check_h_family_bounded(micro_runs["disconnected_pair"].schedule, np.ones(2), 0)
    assert e.status == FAIL


def test_h_family_dam(dam, dam_run):
    e = check_h_family_bounded(dam_run.schedule, dam.weight, dam_run.reference["anchor"])
    assert e.status == PASS and math.isfinite(e.constants["sup"])


def test_condition_B(micro_runs):
    for name in ("single_state", "two_cycle"):
        for variant in ("liminf", "sup"):
            assert check_condition_B(micro_runs[name].schedule, variant).status == PASS
    e = check_condition_B(micro_runs["single_state"].schedule)
    assert e.constants["max"] == 0
    e = check_condition_B(micro_runs["disconnected_pair"].schedule)
    assert e.status == FAIL and e.location == 1


def test_compact_action_full_set(micro_runs, micro):
    m = micro["bellman_toy"]
    e = check_compact_action_inf(m, micro_runs["bellman_toy"].schedule, m.admissible, 1e-9)
    assert e.status == PASS and e.constants["max_violation"] <= 1e-9


def test_compact_action_worst_action(micro_runs, micro):
    m = micro["bellman_toy"]
    K = np.array([[False, True], [True, False]])
    e = check_compact_action_inf(m, micro_runs["bellman_toy"].schedule, K, 0.5)
    assert e.status == FAIL
    state, alpha = e.location
    assert state == 0
    # bracket of the stay action is 2 + alpha v(0) with v(0) = 1
    assert e.constants["max_violation"] == pytest.approx(1 + alpha, abs=1e-9)


def test_compact_action_empty_k(micro_runs, micro):
    m = micro["bellman_toy"]
    K = np.array([[True, True], [False, False]])
    e = check_compact_action_inf(m, micro_runs["bellman_toy"].schedule, K, 0.5)
    assert e.status == FAIL and e.location == 1


def test_compact_action_coercive_level_set(lq, lq_run):
    # level sets of the coercive cost: an action costing more than h_alpha + (1 - alpha) m_alpha is never optimal
    sched = lq_run.schedule
    h_sup = np.max([sol.u - sol.u.min() for sol in sched.solutions[-3:]], axis=0)
    K = lq.c <= h_sup[:, None] + lq_run.rho_star + 1.0
    assert not K.all()
    e = check_compact_action_inf(lq, sched, K, 1e-9)
    assert e.status == PASS


# ---------------------------------------------------------------------------
# majorization


def test_majorization_shared_row():
    P = np.zeros((3, 2, 3))
    P[:, :, :] = [0.2, 0.3, 0.5]
    measures, e = check_majorization(finite_model(P, np.ones((3, 2))))
    assert e.status == PASS
    assert np.allclose(measures[0].cell_masses, [0.2, 0.3, 0.5])
    assert e.constants["discrete_mass"] == pytest.approx(1.0)


def _uniform_model(cells=10):
    grid = StateGrid.uniform(0.0, 1.0, cells)
    acts = ActionStructure.full([0.0, 1.0, 2.0], cells)

    def density(x, a, ys):
        return np.where((np.asarray(ys) >= 0) & (np.asarray(ys) <= 1), 1.0, 0.0)

    kernel = discretize_density_kernel(density, None, grid, acts)
    return MdpModel(grid, acts, kernel, CostTable(np.zeros((cells, 3)), "PC"), WeightVector(np.ones(cells)), None,
                    source=KernelSource(density))


def test_majorization_uniform_continuum_mass():
    m = _uniform_model()
    _, e = check_majorization(m)
    assert e.status == PASS
    assert e.constants["continuum_masses"][0] == pytest.approx(1.0, abs=1e-12)


def test_majorant_dominates_rows(dam):
    measures, e = check_majorization(dam)
    for s in range(0, dam.n_states, 17):
        cap = measures[s].cell_total(dam.grid)
        rows = dam.probs[s][dam.admissible[s]]
        assert np.all(rows <= cap[None, :] + 1e-15)


def test_majorization_dam_flags_atoms(dam):
    _, e = check_majorization(dam)
    assert e.status == PASS
    assert e.constants["atoms_included"] and e.constants["atom_mass"] > 0


def test_majorization_refinement_stable_on_dam(dam):
    fine = build_dam_model(DamModelParams(cells=480))
    K = np.ones_like(dam.admissible)
    coarse_mass = continuum_majorant_mass(dam, range(dam.n_states), K)
    fine_mass = continuum_majorant_mass(fine, range(fine.n_states), np.ones_like(fine.admissible))
    assert fine_mass >= coarse_mass - 1e-3


def test_majorization_gaussian_unbounded_fails():
    base = build_gaussian_family(1)
    refs = [build_gaussian_family(2), build_gaussian_family(4)]
    _, e = check_majorization(base, refinements=refs)
    assert e.status == FAIL
    masses = e.constants["continuum_masses"]
    assert masses[0] < masses[1] < masses[2]


# ---------------------------------------------------------------------------
# uniform integrability


def test_ui_bounded_g_has_empty_tail(dam):
    tails = uniform_integrability_tails(dam, np.ones(dam.n_states), None, [0.5, 1.0, 2.0])
    assert tails[-1] == 0.0
    assert tails[0] == pytest.approx(1.0)


def _laplace_tail_oracle(x, loc, scale, kappa, L):
    """int_L^inf exp(kappa y) f(y - x) dy for Laplace(loc, scale) increments, y - x above loc."""
    r = 1.0 / scale
    return 0.5 * r * math.exp(r * (x + loc)) * math.exp((kappa - r) * L) / (r - kappa)


def test_ui_light_tail_passes_and_matches_integral():
    m = build_shift_model(Laplace(-0.5, 0.5), 0.0, 40.0, 400)
    c = m.grid.centers
    states = np.flatnonzero(c <= 10)
    kappa = 0.5  # tail rate 2 > 2 kappa
    L = np.array([15.0, 22.5, 30.0])
    e = check_uniform_integrability(m, np.exp(kappa * c), None, np.exp(kappa * L), states=states)
    assert e.status == PASS
    tails = e.constants["tails"]
    assert np.all(np.diff(tails) < 0)
    x = c[states[-1]]
    for t, lvl in zip(tails, L):
        assert t == pytest.approx(_laplace_tail_oracle(x, -0.5, 0.5, kappa, lvl), rel=1e-2)


def test_ui_heavy_weight_fails():
    m = build_shift_model(Laplace(-0.5, 0.5), 0.0, 40.0, 400)
    c = m.grid.centers
    kappa = 2.5  # grows faster than the kernel tail decays
    e = check_uniform_integrability(m, np.exp(kappa * c), None, np.exp(kappa * np.array([15.0, 22.5, 30.0])),
                                    states=np.flatnonzero(c <= 10))
    assert e.status == FAIL


def test_ui_gaussian_dam_passes():
    m = build_preset("dam_b_default")
    c = m.grid.centers
    e = check_uniform_integrability(m, m.weight, states=np.flatnonzero(c <= 6))
    assert e.status == PASS


@pytest.mark.parametrize("preset", ["dam_a_default", "dam_b_default"])
def test_ui_tails_nonincreasing(preset):
    m = build_preset(preset)
    levels = np.geomspace(1.0, m.weight.values.max(), 12)
    tails = uniform_integrability_tails(m, m.weight, None, levels)
    assert np.all(np.diff(tails) <= 0)


def test_ui_rejects_negative_g(dam):
    with pytest.raises(ValueError):
        uniform_integrability_tails(dam, -np.ones(dam.n_states), None, [1.0])


# ---------------------------------------------------------------------------
# conditions for the nonnegative-cost model


def test_condition_G_zero_cost(micro):
    e = check_condition_G(micro["zero_cost"], DeterministicPolicy([0, 0]), 0, 1024)
    assert e.status == PASS and e.constants["tail"] == 0


def test_condition_G_lq_reference(lq):
    pol = lq_reference_policy(model=lq)
    start = int(np.argmin(np.abs(lq.grid.centers)))
    e = check_condition_G(lq, pol, start, 4096, bound=lq.meta["reference_bound"])
    assert e.status == PASS


def test_condition_G_infinite_cost_fails():
    P = np.zeros((2, 1, 2))
    P[:, 0, 1] = 1.0
    m = finite_model(P, [[1.0], [np.inf]])
    e = check_condition_G(m, DeterministicPolicy([0, 0]), 0, 256)
    assert e.status == FAIL


def _quadratic_model(n=5, bounded=False):
    xs = np.arange(-n, n + 1, dtype=float)
    S = len(xs)
    c = xs[:, None] ** 2 + xs[None, :] ** 2
    if bounded:
        c = np.minimum(c, 4.0)
    P = np.zeros((S, S, S))
    P[:, :, n] = 1.0
    return finite_model(P, c)


def test_su_quadratic_passes():
    m = _quadratic_model()
    sets = [np.flatnonzero(np.abs(np.arange(-5, 6)) <= k) for k in range(1, 5)]
    e = check_su_coercivity(m, sets, sets)
    assert e.status == PASS
    assert np.array_equal(e.constants["m_n"], [(k + 1) ** 2 for k in range(1, 5)])


def test_su_bounded_cost_fails():
    m = _quadratic_model(bounded=True)
    sets = [np.flatnonzero(np.abs(np.arange(-5, 6)) <= k) for k in range(1, 5)]
    assert check_su_coercivity(m, sets, sets).status == FAIL


def test_su_lq(lq):
    assert check_su_coercivity(lq, lq.meta["K_n"], lq.meta["A_n"]).status == PASS


def test_drift_exponential_on_dam_laws(dam):
    entry, lam = check_drift_exponential(dam.meta["z_laws"], DamModelParams().kappa)
    assert entry.passed and lam == dam.meta["drift_lambda"]
