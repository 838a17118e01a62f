"""Occupation measures, invariant pairs and the minimum-pair search.

Everything is exact linear algebra on the finite model: marginals are
propagated forward, Cesaro averages are doubled with matrix products, and the
limit is decomposed into a stationary randomized policy and its state law.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .assumptions import MAJORIZATION_BAND, MajorizingMeasure
from .model import DeterministicPolicy, MarkovPolicy, MdpModel, evaluate_policy_average_cost
from .oracles import cesaro_limit, deterministic_policies, policy_count, policy_gain
from .report import FAIL, PASS, AssumptionEntry

log = logging.getLogger(__name__)

MASS_TOL = 1e-12
ENUMERATION_CAP = 200_000


@dataclass
class OccupationMeasure:
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.atleast_2d(np.asarray(self.mass, dtype=float))
        if np.any(self.mass < -MASS_TOL):
            raise ValueError("occupation measure has negative mass")
        if abs(self.mass.sum() - 1.0) > 1e-9:
            raise ValueError(f"occupation measure has total mass {self.mass.sum()}")

    @property
    def state_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.mass.sum())


@dataclass
class PairCandidate:
    policy: np.ndarray
    state_marginal: np.ndarray
    cost: float = float("nan")
    invariance_residual: float = float("nan")
    meta: dict = field(default_factory=dict)


def as_randomized(model: MdpModel, policy) -> np.ndarray:
    """(S, A) row-stochastic matrix of a deterministic or randomized stationary policy."""
    if isinstance(policy, DeterministicPolicy):
        mu = policy.as_matrix(model.n_actions)
    else:
        mu = np.asarray(policy, dtype=float)
    if mu.shape != (model.n_states, model.n_actions):
        raise ValueError("policy shape does not match the model")
    if np.any((mu > 0) & ~model.admissible):
        s = int(np.argwhere((mu > 0) & ~model.admissible)[0][0])
        raise ValueError(f"policy uses an inadmissible action at state {s}")
    if np.any(np.abs(mu.sum(axis=1) - 1) > 1e-12):
        raise ValueError("policy rows must sum to 1")
    return mu


def _stage(model: MdpModel, policy, k: int) -> np.ndarray:
    if isinstance(policy, MarkovPolicy):
        return as_randomized(model, policy.at(k))
    return as_randomized(model, policy)


def _chain(model: MdpModel, mu: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", mu, model.probs)


def _check_p0(p0, S: int) -> np.ndarray:
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (S,) or np.any(p0 < 0) or abs(p0.sum() - 1) > 1e-12:
        raise ValueError("p0 must be a probability vector over states")
    return p0


def propagate_marginals(model: MdpModel, policy, p0, n: int) -> list[OccupationMeasure]:
    """``gamma_k(s, a) = p_k(s) pi_k(a|s)`` for ``k = 0..n-1`` by exact forward recursion."""
    p = _check_p0(p0, model.n_states)
    out = []
    for k in range(n):
        mu = _stage(model, policy, k)
        gamma = p[:, None] * mu
        out.append(OccupationMeasure(gamma))
        p = np.einsum("sa,sat->t", gamma, model.probs)
    return out


def average_occupation(gammas) -> OccupationMeasure:
    gammas = list(gammas)
    if not gammas:
        raise ValueError("need at least one occupation measure")
    return OccupationMeasure(np.mean([g.mass for g in gammas], axis=0))


def tv_distance(a, b) -> float:
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


@dataclass
class LimitResult:
    gamma: OccupationMeasure
    distance: float
    n: int
    converged: bool


def limit_occupation(model: MdpModel, policy, p0, tol: float = 1e-12, n_max: int = 2**50) -> LimitResult:
    """Limit of the Cesaro averages of the occupation measures.

    Markov prefixes are propagated exactly; from then on the stationary tail
    policy is applied and the averaging operator is doubled,
    ``A_{2n} = A_n (I + P^n) / 2``, until successive averages are within
    ``tol`` in total variation (which metrizes weak convergence on a finite
    grid).
    """
    p = _check_p0(p0, model.n_states)
    if isinstance(policy, MarkovPolicy):
        for k in range(len(policy.stages)):
            p = p @ _chain(model, as_randomized(model, policy.stages[k]))
        mu = as_randomized(model, policy.tail)
    else:
        mu = as_randomized(model, policy)
    P = _chain(model, mu)
    S = model.n_states
    avg = np.eye(S)
    Pn = P.copy()
    prev = p[:, None] * mu
    n = 1
    # an invariant start makes every gamma_k equal, so the first average is already the limit
    dist = tv_distance(p, p @ P)
    if dist <= tol:
        return LimitResult(OccupationMeasure(prev), dist, n, True)
    while n < n_max:
        avg = 0.5 * avg @ (np.eye(S) + Pn)
        Pn = Pn @ Pn
        n *= 2
        marg = p @ avg
        marg = np.clip(marg, 0.0, None)
        marg /= marg.sum()
        gamma = marg[:, None] * mu
        dist = tv_distance(gamma, prev)
        prev = gamma
        if dist <= tol:
            return LimitResult(OccupationMeasure(gamma), dist, n, True)
    log.warning("Cesaro averages did not settle within n_max=%d (distance %.3g)", n_max, dist)
    return LimitResult(OccupationMeasure(prev), dist, n, False)


def decompose(gamma: OccupationMeasure, admissible=None) -> PairCandidate:
    """Split ``gamma`` into its state marginal and a stationary randomized policy.

    States without mass get a unit mass on their lowest-index admissible action.
    """
    mass = gamma.mass
    S, A = mass.shape
    adm = np.ones((S, A), dtype=bool) if admissible is None else np.asarray(admissible, dtype=bool)
    p = mass.sum(axis=1)
    mu = np.zeros((S, A))
    pos = p > 0
    mu[pos] = mass[pos] / p[pos, None]
    first = np.argmax(adm, axis=1)
    mu[~pos, first[~pos]] = 1.0
    return PairCandidate(mu, p)


def invariance_residual(model: MdpModel, pair: PairCandidate) -> float:
    """Total-variation distance between ``p`` and its image under the pair's chain."""
    image = pair.state_marginal @ _chain(model, pair.policy)
    return tv_distance(pair.state_marginal, image)


def cost_of_pair(model: MdpModel, pair: PairCandidate, bound: float = 1e-9, horizon: int = 2000) -> float:
    """``sum c(s, a) mu(a|s) p(s)``, valid only for (near) invariant pairs.

    Cross-checked against the finite-horizon average cost started from ``p``,
    which equals the pair cost exactly when ``p`` is invariant.
    """
    res = invariance_residual(model, pair)
    if res > bound:
        raise ValueError(f"invariance residual {res:.3g} exceeds {bound:.3g}; the cost identity does not apply")
    weight = pair.policy * pair.state_marginal[:, None]
    cost = float(np.sum(np.where(weight > 0, model.c, 0.0) * weight))
    if np.isfinite(cost):
        run = float(pair.state_marginal @ evaluate_policy_average_cost(model, pair.policy, horizon))
        cmax = float(np.max(np.abs(np.where(weight > 0, model.c, 0.0))))
        if abs(run - cost) > 1e-8 * max(1.0, abs(cost)) + 2 * res * horizon * cmax:
            raise RuntimeError(f"pair cost {cost} disagrees with running average {run}")
    return cost


def _finish(model: MdpModel, pair: PairCandidate, bound: float) -> PairCandidate:
    pair.invariance_residual = invariance_residual(model, pair)
    pair.cost = cost_of_pair(model, pair, bound=max(bound, pair.invariance_residual))
    return pair


def policy_average_cost(model: MdpModel, policy, p0) -> float:
    """``J(pi, p0)`` for a stationary or eventually stationary Markov policy (exact Cesaro limit)."""
    p = _check_p0(p0, model.n_states)
    if isinstance(policy, MarkovPolicy):
        for f in policy.stages:
            p = p @ _chain(model, as_randomized(model, f))
        policy = policy.tail
    mu = as_randomized(model, policy)
    if isinstance(policy, DeterministicPolicy):
        g = policy_gain(model, policy.choice)
        pos = p > 0
        return float(p[pos] @ g[pos])
    P = _chain(model, mu)
    c = np.einsum("sa,sa->s", mu, np.where(mu > 0, model.c, 0.0))
    Pi = cesaro_limit(P)
    return float(p @ (Pi @ c))


def improve_pair(model: MdpModel, policy, p0, tol: float = 1e-9) -> PairCandidate:
    """Stationary pair ``(mu, p)`` with ``p`` invariant and ``J(mu, p) <= J(pi, p0)``."""
    seed_cost = policy_average_cost(model, policy, p0)
    if not np.isfinite(seed_cost):
        raise ValueError("seed has infinite average cost")
    lim = limit_occupation(model, policy, p0, tol=min(tol, 1e-12))
    pair = decompose(lim.gamma, model.admissible)
    pair = _finish(model, pair, tol)
    pair.meta.update(seed_cost=seed_cost, limit_distance=lim.distance, limit_n=lim.n, converged=lim.converged)
    if pair.cost > seed_cost + tol * max(1.0, abs(seed_cost)):
        raise RuntimeError(f"pair cost {pair.cost} exceeds seed cost {seed_cost}")
    return pair


@dataclass
class SearchResult:
    pair: PairCandidate
    regime: str
    seed_table: list[dict]
    sweep_cost: float | None = None
    n_policies: int | None = None


def _best_deterministic(model: MdpModel) -> tuple[float, PairCandidate, int]:
    best_cost, best_pair, n = np.inf, None, 0
    for pol in deterministic_policies(model):
        n += 1
        P = model.probs[np.arange(model.n_states), pol]
        Pi = cesaro_limit(P)
        c = model.c[np.arange(model.n_states), pol]
        if not np.all(np.isfinite(c)):
            continue
        g = Pi @ c
        s = int(np.argmin(g))
        if g[s] < best_cost - 1e-15:
            best_cost = float(g[s])
            mu = DeterministicPolicy(pol).as_matrix(model.n_actions)
            best_pair = PairCandidate(mu, Pi[s].copy())
    return best_cost, best_pair, n


def _lp_pair(model: MdpModel) -> PairCandidate:
    """Minimum-cost invariant occupation measure by linear programming."""
    S, A = model.n_states, model.n_actions
    adm = model.admissible & np.isfinite(model.c)
    idx = np.argwhere(adm)
    n = len(idx)
    cost = model.c[adm]
    # balance: sum_a gamma(t, a) - sum_{s,a} q(t|s,a) gamma(s, a) = 0, and total mass 1
    A_eq = np.zeros((S + 1, n))
    for j, (s, a) in enumerate(idx):
        A_eq[s, j] += 1.0
        A_eq[:S, j] -= model.probs[s, a]
    A_eq[S] = 1.0
    b_eq = np.zeros(S + 1)
    b_eq[S] = 1.0
    res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"occupation-measure LP failed: {res.message}")
    gamma = np.zeros((S, A))
    gamma[adm] = np.clip(res.x, 0.0, None)
    gamma /= gamma.sum()
    pair = decompose(OccupationMeasure(gamma), model.admissible)
    _route_to_support(model, pair.policy, gamma.sum(axis=1) > MASS_TOL)
    # make the marginal exactly invariant for the decomposed policy
    pair.state_marginal = pair.state_marginal @ cesaro_limit(_chain(model, pair.policy))
    pair.meta["lp_objective"] = float(res.fun)
    return pair


def _route_to_support(model: MdpModel, policy: np.ndarray, support: np.ndarray):
    """Give states outside ``support`` an action that leads back into it (in place).

    Layer by layer, an unrouted state takes the admissible action with the
    largest one-step mass into the states routed so far (cheapest on ties),
    so every routed state reaches the support with positive probability.
    """
    routed = support.copy()
    c = np.where(model.admissible, model.c, np.inf)
    while not routed.all():
        into = model.probs[:, :, routed].sum(axis=2)
        into = np.where(model.admissible, into, -1.0)
        best = into.max(axis=1)
        layer = ~routed & (best > MASS_TOL)
        if not layer.any():
            break  # the rest cannot reach the support; leave their actions as they are
        for s in np.flatnonzero(layer):
            cand = np.flatnonzero(into[s] >= best[s] - 1e-12)
            a = cand[np.argmin(c[s, cand])]
            policy[s] = 0.0
            policy[s, a] = 1.0
        routed |= layer


def minimum_pair_search(model: MdpModel, seeds, rounds: int = 1, tol: float = 1e-9,
                        exhaustive_states: int = 12, exhaustive_actions: int = 8,
                        use_lp: bool = True) -> SearchResult:
    """Improve every seed, then sweep for the cheapest invariant pair.

    Small models (at most ``exhaustive_states`` x ``exhaustive_actions`` and
    a manageable number of deterministic policies) are swept exhaustively;
    larger ones are solved as a linear program over invariant occupation
    measures.  The regime used is reported.
    """
    table, candidates = [], []
    for i, (policy, p0) in enumerate(seeds):
        try:
            pair = improve_pair(model, policy, p0, tol)
        except ValueError as exc:
            table.append({"seed": i, "status": "rejected", "reason": str(exc)})
            continue
        for _ in range(rounds - 1):
            pair = improve_pair(model, pair.policy, pair.state_marginal, tol)
        table.append({"seed": i, "status": "ok", "seed_cost": pair.meta["seed_cost"], "pair_cost": pair.cost,
                      "residual": pair.invariance_residual})
        candidates.append(pair)
    if not candidates:
        raise ValueError("no seed with finite average cost")

    regime, sweep_cost, n_pol = "seeds_only", None, None
    small = model.n_states <= exhaustive_states and model.n_actions <= exhaustive_actions
    if small and policy_count(model) <= ENUMERATION_CAP:
        sweep_cost, pair, n_pol = _best_deterministic(model)
        regime = "exhaustive"
        if pair is not None:
            candidates.append(_finish(model, pair, tol))
    elif use_lp:
        pair = _finish(model, _lp_pair(model), tol)
        sweep_cost = pair.cost
        regime = "linear_program"
        candidates.append(pair)
    best = min(candidates, key=lambda p: p.cost)
    return SearchResult(best, regime, table, sweep_cost, n_pol)


def majorization_band_check(marginals, O, D, nu: MajorizingMeasure, grid=None, tol: float = 1e-12) -> AssumptionEntry:
    """``p((O minus D) & cell) <= nu(cell)`` for every supplied state marginal and every band cell."""
    O = np.asarray(O, dtype=int)
    D = np.zeros(0, dtype=int) if D is None else np.asarray(D, dtype=int)
    band = np.setdiff1d(O, D)
    cap = nu.cell_total(grid) if grid is not None else nu.cell_masses
    worst, where = np.inf, None
    for i, p in enumerate(marginals):
        p = np.asarray(p, dtype=float)
        margin = cap[band] - p[band]
        if len(margin) == 0:
            continue
        k = int(np.argmin(margin))
        if margin[k] < worst:
            worst, where = float(margin[k]), (i, int(band[k]))
    ok = worst >= -tol
    return AssumptionEntry(MAJORIZATION_BAND + "_marginals", PASS if ok else FAIL,
                           {"n_marginals": len(list(marginals)) if not isinstance(marginals, list) else len(marginals)},
                           location=where, margin=worst)
