"""Discounted Bellman operator, tilde weight and the alpha-DCOE solver.

Values at discount factors close to 1 are of order 1/(1-alpha), so a solution
is kept in anchored form ``v = offset + u`` where ``u[anchor] = 0`` and
``offset = g / (1 - alpha)``.  Residuals are computed from ``(u, g)`` which
keeps them accurate to a few ulps of ``u`` instead of ulps of ``v``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import DeterministicPolicy, MdpModel, UcParameters, WeightVector, expect

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10**6


def bracket(model: MdpModel, v, alpha: float) -> np.ndarray:
    """``c(s, a) + alpha * sum_s' q(s'|s, a) v(s')``; +inf on inadmissible pairs."""
    v = np.asarray(v, dtype=float)
    if alpha == 0:
        return model.c.copy()
    q = model.c + alpha * model.expect(v)
    return np.where(model.admissible, q, np.inf)


def bellman_apply(model: MdpModel, v, alpha: float) -> np.ndarray:
    """``(T_alpha v)(s) = min_a {c + alpha * E v}``; ``alpha = 1`` gives ``T``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (model.n_states,):
        raise ValueError("value vector length does not match the model")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if np.any(np.isnan(v)):
        raise ValueError("value vector contains NaN")
    if model.model_class == "UC" and not np.all(np.isfinite(v)):
        raise ValueError("UC models need a finite value vector")
    if model.model_class == "PC" and np.any(v < 0):
        raise ValueError("PC models need a nonnegative value vector")
    return bracket(model, v, alpha).min(axis=1)


def greedy(q: np.ndarray) -> np.ndarray:
    """Row-wise argmin; ``np.argmin`` returns the first minimizer, i.e. the lowest index."""
    return np.argmin(q, axis=1)


def build_tilde_weight(
    w,
    uc: UcParameters,
    alpha: float,
    alpha_tilde: float | None = None,
    terms: int | None = None,
    tail: bool = True,
) -> WeightVector:
    """Weight under which ``T_alpha`` is a ``alpha/alpha_tilde`` contraction.

    The series is ``sum_n alpha_tilde**n c_n`` with ``c_0 = w`` and
    ``c_n = lam**n w + (1 + lam + ... + lam**(n-1)) b``.  With ``terms=None``
    it is summed in closed form; otherwise the first ``terms`` summands are
    added explicitly and, if ``tail`` is set, the remainder in closed form
    (``tail=False`` returns the bare partial sum).
    """
    w = np.asarray(getattr(w, "values", w), dtype=float)
    if alpha_tilde is None:
        alpha_tilde = 0.5 * (alpha + 1.0)
    if not alpha < alpha_tilde < 1.0:
        raise ValueError(f"need alpha < alpha_tilde < 1, got alpha={alpha}, alpha_tilde={alpha_tilde}")
    at, lam, b = alpha_tilde, uc.lam, uc.b
    if terms is None:
        return WeightVector(w / (1 - at * lam) + b * at / ((1 - at) * (1 - at * lam)))
    if terms < 1:
        raise ValueError("terms must be >= 1")
    out = np.zeros_like(w)
    for n in range(terms):
        geo = sum(lam**k for k in range(n))
        out = out + at**n * (lam**n * w + geo * b)
    if tail:
        T = terms
        out = out + (at * lam) ** T * w / (1 - at * lam)
        out = out + b / (1 - lam) * (at**T / (1 - at) - (at * lam) ** T / (1 - at * lam))
    return WeightVector(out)


@dataclass
class DiscountedSolution:
    alpha: float
    v: np.ndarray
    residual_norm: float
    iterations: int
    tilde_w: np.ndarray
    beta: float
    alpha_tilde: float
    u: np.ndarray
    g: float
    anchor: int
    policy: np.ndarray
    converged: bool
    certificate: str
    method: str
    tol: float
    infinite_states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def offset(self) -> float:
        """Constant part of ``v``; ``v = offset + u``."""
        return self.g / (1.0 - self.alpha)

    def scaled(self, s: int) -> float:
        """``(1 - alpha) v(s)`` without forming the large number ``v(s)``."""
        return self.g + (1.0 - self.alpha) * self.u[s]


def finite_value_states(model: MdpModel) -> tuple[np.ndarray, np.ndarray]:
    """States from which some policy keeps the cost finite forever, and the pairs that do it.

    A pair survives if its cost is finite and its row puts no mass outside
    the surviving states; iterate to the largest fixed point.
    """
    ok_pair = model.admissible & np.isfinite(model.c)
    ok_state = ok_pair.any(axis=1)
    while True:
        leak = (model.probs[:, :, ~ok_state] > 0).any(axis=2)
        new_pair = ok_pair & ~leak
        new_state = new_pair.any(axis=1)
        if np.array_equal(new_pair, ok_pair) and np.array_equal(new_state, ok_state):
            return ok_state, ok_pair
        ok_pair, ok_state = new_pair, new_state


def _anchored_eval(P: np.ndarray, c: np.ndarray, alpha: float, anchor: int) -> tuple[np.ndarray, float]:
    """Solve ``(I - alpha P)(u + g/(1-alpha)) = c`` with ``u[anchor] = 0``."""
    S = len(c)
    M = np.eye(S) - alpha * P
    M[:, anchor] = 1.0
    x = np.linalg.solve(M, c)
    g = float(x[anchor])
    x[anchor] = 0.0
    return x, g


def solve_dcoe(
    model: MdpModel,
    alpha: float,
    alpha_tilde: float | None = None,
    tol: float = DEFAULT_TOL,
    method: str = "policy",
    max_iter: int = DEFAULT_MAX_ITER,
    v0=None,
) -> DiscountedSolution:
    """Solve ``v = T_alpha v``.

    UC models are measured in the tilde-weight norm with ``beta =
    alpha/alpha_tilde``; PC models in the sup norm with ``beta = alpha``.

    ``method="vi"`` is plain value iteration (from ``v0``, default 0) stopped
    once the successive-iterate norm is at most ``tol (1-beta)/beta``; the
    returned vector is the last image ``T v``.  ``method="policy"``
    alternates exact evaluation of the greedy policy with greedy improvement
    until the policy is stable, which stays fast as alpha approaches 1.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if alpha_tilde is None:
        alpha_tilde = 0.5 * (alpha + 1.0)
    S = model.n_states
    if model.model_class == "UC":
        if model.weight is None or model.uc is None:
            raise ValueError("UC model needs a weight vector and fitted constants")
        tw = build_tilde_weight(model.weight, model.uc, alpha, alpha_tilde).values
        beta = alpha / alpha_tilde
    else:
        tw = np.ones(S)
        beta = alpha
    threshold = tol * (1 - beta) / beta

    finite, ok_pair = finite_value_states(model)
    if not finite.all():
        log.warning("%d state(s) have infinite discounted cost", int((~finite).sum()))
    sub = np.flatnonzero(finite)
    P = model.probs[np.ix_(sub, np.arange(model.n_actions), sub)]
    c = np.where(ok_pair[sub], model.c[sub], np.inf)
    w_sub = tw[sub]

    if len(sub) == 0:
        u = np.full(S, np.inf)
        return DiscountedSolution(alpha, u.copy(), 0.0, 0, tw, beta, alpha_tilde, u, 0.0, 0,
                                  np.zeros(S, dtype=int), True, "all_infinite", method, tol,
                                  np.arange(S))

    if method == "policy":
        u, g, pol, iters, cert = _policy_loop(P, c, alpha, w_sub, threshold, max_iter)
    elif method == "vi":
        start = None if v0 is None else np.asarray(v0, dtype=float)[sub]
        u, g, pol, iters, cert = _value_loop(P, c, alpha, w_sub, threshold, max_iter, start)
    else:
        raise ValueError(f"unknown method {method!r}")

    converged = cert in ("policy_stable", "contraction_bound")
    if not converged:
        log.warning("alpha=%g: no convergence after %d iterations", alpha, iters)

    u_full = np.full(S, np.inf)
    u_full[sub] = u
    anchor = int(sub[0])
    pol_full = model.first_admissible()
    pol_full[sub] = pol
    offset = g / (1 - alpha)
    v = offset + u_full
    res = anchored_residual_norm(model, alpha, u_full, g, tw)
    return DiscountedSolution(
        alpha=alpha, v=v, residual_norm=res, iterations=iters, tilde_w=tw, beta=beta,
        alpha_tilde=alpha_tilde, u=u_full, g=g, anchor=anchor, policy=pol_full,
        converged=converged, certificate=cert, method=method, tol=tol,
        infinite_states=np.flatnonzero(~finite),
    )


def anchored_residual(model: MdpModel, alpha: float, u, g: float) -> np.ndarray:
    """``T_alpha v - v`` for ``v = u + g/(1-alpha)``, using ``T_alpha(u + k) = T_alpha u + alpha k``.

    Avoids forming ``v`` itself, whose entries are of order ``1/(1-alpha)``.
    States with infinite ``u`` get residual 0.
    """
    u = np.asarray(u, dtype=float)
    finite = np.isfinite(u)
    r = bracket(model, u, alpha).min(axis=1) - np.where(finite, u, 0.0) - g
    return np.where(finite, r, 0.0)


def anchored_residual_norm(model: MdpModel, alpha: float, u, g: float, tilde_w) -> float:
    return float(np.max(np.abs(anchored_residual(model, alpha, u, g)) / np.asarray(tilde_w)))


def dcoe_residual_norm(model: MdpModel, sol: DiscountedSolution) -> float:
    """Independent recomputation of ``||T_alpha v - v||`` in the solution's norm."""
    return anchored_residual_norm(model, sol.alpha, sol.u, sol.g, sol.tilde_w)


def _policy_loop(P, c, alpha, w, threshold, max_iter):
    S = P.shape[0]
    idx = np.arange(S)
    pol = np.argmin(c, axis=1)
    u, g = _anchored_eval(P[idx, pol], c[idx, pol], alpha, 0)
    for it in range(1, max_iter + 1):
        q = c + alpha * (P @ u)
        best = greedy(q)
        cur = q[idx, pol]
        margin = 1e-13 * np.maximum(1.0, np.abs(cur))
        switch = q[idx, best] < cur - margin
        if not switch.any():
            return _polish(P, c, alpha, w, threshold, u, g, pol, it)
        pol = np.where(switch, best, pol)
        u, g = _anchored_eval(P[idx, pol], c[idx, pol], alpha, 0)
    return u, g, pol, max_iter, "iteration_cap"


def _polish(P, c, alpha, w, threshold, u, g, pol, iters):
    """A few relative value-iteration sweeps to meet the contraction-bound stopping rule if roundoff allows."""
    for _ in range(3):
        q = c + alpha * (P @ u)
        Tu = q.min(axis=1) - g
        if np.max(np.abs(Tu - u) / w) <= threshold:
            return _renorm(Tu, g, alpha) + (greedy(q), iters, "contraction_bound")
        u, g = _renorm(Tu, g, alpha)
    return u, g, pol, iters, "policy_stable"


def _renorm(u, g, alpha):
    shift = u[0]
    return u - shift, g + (1 - alpha) * shift


def _value_loop(P, c, alpha, w, threshold, max_iter, start):
    # anchored plain value iteration: the pair (u, g) tracks v = u + g/(1-alpha) exactly
    S = P.shape[0]
    if start is None:
        u, g = np.zeros(S), 0.0
    else:
        u, g = _renorm(start.copy(), 0.0, alpha)
    for it in range(1, max_iter + 1):
        q = c + alpha * (P @ u)
        Tu = q.min(axis=1) - g
        diff = np.max(np.abs(Tu - u) / w)
        u, g = _renorm(Tu, g, alpha)
        if diff <= threshold:
            return u, g, greedy(q), it, "contraction_bound"
    return u, g, greedy(c + alpha * (P @ u)), max_iter, "iteration_cap"


def value_iterates(model: MdpModel, alpha: float, n: int, v0=None) -> list[np.ndarray]:
    """The first ``n`` plain value-iteration iterates ``T_alpha^k v0`` (k = 1..n)."""
    v = np.zeros(model.n_states) if v0 is None else np.asarray(v0, dtype=float)
    out = []
    for _ in range(n):
        v = bellman_apply(model, v, alpha)
        out.append(v)
    return out


def extract_epsilon_policy(model: MdpModel, sol: DiscountedSolution, epsilon: float) -> DeterministicPolicy:
    """Greedy stationary policy at ``sol.v`` (lowest index on ties).

    The one-step slack ``c + alpha E v - v`` of the chosen action is checked
    against ``epsilon (1 - alpha)``, which makes the policy epsilon-optimal.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    finite = np.isfinite(sol.u)
    u = np.where(finite, sol.u, 0.0)
    q = model.c + sol.alpha * expect(model.probs, np.where(finite, u, np.inf))
    q = np.where(model.admissible, q, np.inf)
    choice = greedy(q)
    fin = np.flatnonzero(finite)
    slack = q[fin, choice[fin]] - u[fin] - sol.g
    # allow the solver's own residual on top of the epsilon budget
    allowed = epsilon * (1 - sol.alpha) + 2 * sol.residual_norm * sol.tilde_w[fin] + 1e-12 * np.maximum(1, np.abs(u[fin]))
    if np.any(slack > allowed):
        s = int(fin[np.argmax(slack - allowed)])
        raise RuntimeError(f"greedy action at state {s} misses the epsilon-optimality slack")
    return DeterministicPolicy(choice)
