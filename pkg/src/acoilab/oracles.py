"""Independent reference computations used to cross-check the main pipeline.

Nothing here shares code with the discounted solver or the vanishing-discount
pipeline beyond the model container: gains come from Cesaro limits of the
chain, optimal average costs from relative value iteration or from
enumerating every deterministic stationary policy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import MdpModel


def cesaro_limit(P: np.ndarray, max_squarings: int = 200, tol: float = 1e-15) -> np.ndarray:
    """Cesaro limit ``lim (1/n) sum_k P^k`` of a stochastic matrix.

    The lazy chain ``(I + P)/2`` is aperiodic and shares the Cesaro limit
    with ``P``, and its powers converge, so repeated squaring gets there in
    a few dozen products.
    """
    Q = 0.5 * (np.eye(len(P)) + P)
    for _ in range(max_squarings):
        Q2 = Q @ Q
        Q2 /= Q2.sum(axis=1, keepdims=True)
        if np.max(np.abs(Q2 - Q)) <= tol:
            return Q2
        Q = Q2
    return Q


def policy_gain(model: MdpModel, choice) -> np.ndarray:
    """Average cost of a deterministic stationary policy from every start state."""
    choice = np.asarray(choice, dtype=int)
    idx = np.arange(model.n_states)
    P = model.probs[idx, choice]
    c = model.c[idx, choice]
    Pi = cesaro_limit(P)
    if not np.all(np.isfinite(c)):
        reach = Pi[:, ~np.isfinite(c)].sum(axis=1) > 0
        out = Pi @ np.where(np.isfinite(c), c, 0.0)
        return np.where(reach, np.inf, out)
    return Pi @ c


def randomized_gain(model: MdpModel, mu: np.ndarray) -> np.ndarray:
    P = np.einsum("sa,sat->st", mu, model.probs)
    c = np.einsum("sa,sa->s", mu, np.where(mu > 0, model.c, 0.0))
    return cesaro_limit(P) @ c


def stationary_law(P: np.ndarray) -> np.ndarray:
    """Invariant law of an irreducible chain by a bordered linear solve."""
    S = len(P)
    A = np.vstack([P.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    p, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return p


def deterministic_policies(model: MdpModel):
    """Every deterministic stationary policy as an index array."""
    options = [np.flatnonzero(model.admissible[s]) for s in range(model.n_states)]
    for combo in itertools.product(*options):
        yield np.array(combo, dtype=int)


def policy_count(model: MdpModel) -> int:
    return int(np.prod([max(1, int(row.sum())) for row in model.admissible], dtype=float))


@dataclass
class BruteForceResult:
    gain: np.ndarray
    policy: np.ndarray
    n_policies: int


def brute_force_average_cost(model: MdpModel) -> BruteForceResult:
    """Per-state minimum gain over all deterministic stationary policies."""
    best = np.full(model.n_states, np.inf)
    best_pol = None
    best_mean = np.inf
    n = 0
    for pol in deterministic_policies(model):
        g = policy_gain(model, pol)
        best = np.minimum(best, g)
        if np.mean(g) < best_mean:
            best_mean, best_pol = float(np.mean(g)), pol
        n += 1
    return BruteForceResult(best, best_pol, n)


def brute_force_discounted(model: MdpModel, alpha: float) -> np.ndarray:
    """Optimal discounted value as the pointwise minimum over policy values."""
    best = np.full(model.n_states, np.inf)
    idx = np.arange(model.n_states)
    for pol in deterministic_policies(model):
        P = model.probs[idx, pol]
        c = model.c[idx, pol]
        if not np.all(np.isfinite(c)):
            continue
        best = np.minimum(best, np.linalg.solve(np.eye(model.n_states) - alpha * P, c))
    return best


@dataclass
class RviResult:
    gain: float
    h: np.ndarray
    span: float
    iterations: int
    converged: bool


def relative_value_iteration(
    model: MdpModel, tol: float = 1e-11, max_iter: int = 2_000_000, tau: float = 0.5, ref: int = 0
) -> RviResult:
    """Optimal average cost of a unichain model by relative value iteration.

    Runs on the aperiodic transform ``tau I + (1 - tau) P`` (same gain) and
    stops when the span of ``T h - h`` is below ``tol``; the gain is the
    midpoint of its range, within ``span/2`` of the truth.
    """
    S, A = model.n_states, model.n_actions
    Pt = (1 - tau) * model.probs + tau * np.eye(S)[:, None, :]
    c = np.where(model.admissible, model.c, np.inf)
    h = np.zeros(S)
    span = np.inf
    for it in range(1, max_iter + 1):
        Th = np.min(c + Pt @ h, axis=1)
        d = Th - h
        span = float(d.max() - d.min())
        h = Th - Th[ref]
        if span <= tol:
            return RviResult(float(0.5 * (d.max() + d.min())), h, span, it, True)
    return RviResult(float(0.5 * (d.max() + d.min())), h, span, max_iter, False)


def enumerate_trajectory_cost(model: MdpModel, choice, horizon: int) -> np.ndarray:
    """``J_n / n`` by summing over every state path of length ``horizon`` (tiny models only)."""
    choice = np.asarray(choice, dtype=int)
    S = model.n_states
    out = np.zeros(S)
    for s0 in range(S):
        total = 0.0
        for path in itertools.product(range(S), repeat=horizon - 1):
            states = (s0,) + path
            prob = 1.0
            cost = 0.0
            for k, s in enumerate(states):
                cost += model.c[s, choice[s]]
                if k + 1 < len(states):
                    prob *= model.probs[s, choice[s], states[k + 1]]
                    if prob == 0.0:
                        break
            if prob > 0.0:
                total += prob * cost
        out[s0] = total / horizon
    return out
