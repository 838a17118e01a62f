"""Vanishing-discount construction of an average-cost optimality inequality pair.

A finite schedule of discount factors approaching 1 is solved, relative value
functions are formed (against an anchor state for UC models, against the
minimum for PC models), and their lower/upper envelopes over a tail window
stand in for liminf and limsup.  The resulting pair is checked against the
undiscounted Bellman operator in both directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .discounted import DEFAULT_TOL, DiscountedSolution, bracket, greedy, solve_dcoe
from .model import DeterministicPolicy, MarkovPolicy, MdpModel, weighted_norm

log = logging.getLogger(__name__)

DEFAULT_ALPHA0 = 0.9
DEFAULT_N = 20
DEFAULT_FLOOR = 0.999
DEFAULT_WINDOW = 3


def default_alphas(alpha0: float = DEFAULT_ALPHA0, n: int = DEFAULT_N) -> np.ndarray:
    """``alpha_k = 1 - 2**-k (1 - alpha0)`` for ``k = 0..n``."""
    return 1.0 - (1.0 - alpha0) * 2.0 ** -np.arange(n + 1)


@dataclass
class DiscountSchedule:
    alphas: np.ndarray
    solutions: list[DiscountedSolution] = field(default_factory=list)
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        validate_alphas(self.alphas, self.floor)

    def __len__(self):
        return len(self.alphas)


def validate_alphas(alphas, floor: float = DEFAULT_FLOOR):
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or len(alphas) == 0:
        raise ValueError("schedule needs at least one discount factor")
    if np.any(alphas <= 0) or np.any(alphas >= 1):
        raise ValueError("discount factors must lie strictly between 0 and 1")
    if np.any(np.diff(alphas) <= 0):
        raise ValueError("discount factors must be strictly increasing")
    if alphas[-1] < floor:
        raise ValueError(f"final discount factor {alphas[-1]} is below the floor {floor}")


def solve_schedule(model: MdpModel, alphas=None, tol: float = DEFAULT_TOL, floor: float = DEFAULT_FLOOR,
                   method: str = "policy") -> DiscountSchedule:
    sched = DiscountSchedule(default_alphas() if alphas is None else alphas, floor=floor)
    sched.solutions = [solve_dcoe(model, float(a), tol=tol, method=method) for a in sched.alphas]
    return sched


# ---------------------------------------------------------------------------
# relative values


def uc_relative_values(schedule: DiscountSchedule, anchor: int) -> list[np.ndarray]:
    """``h_alpha = v_alpha - v_alpha(anchor)`` per schedule point (exactly 0 at the anchor)."""
    out = []
    for sol in schedule.solutions:
        S = len(sol.u)
        if not 0 <= anchor < S:
            raise IndexError(f"anchor {anchor} out of range for {S} states")
        if not np.isfinite(sol.u[anchor]):
            raise ValueError("anchor state has infinite value")
        h = sol.u - sol.u[anchor]
        h[anchor] = 0.0
        out.append(h)
    return out


def pc_relative_values(schedule: DiscountSchedule) -> tuple[np.ndarray, list[np.ndarray]]:
    """``m_alpha = min v_alpha`` and ``h_alpha = v_alpha - m_alpha`` per schedule point."""
    ms, hs = [], []
    for sol in schedule.solutions:
        if not np.any(np.isfinite(sol.u)):
            raise ValueError(f"v_alpha is infinite at every state (alpha={sol.alpha})")
        k = int(np.argmin(sol.u))
        ms.append(sol.offset + sol.u[k])
        h = sol.u - sol.u[k]
        h[k] = 0.0
        hs.append(h)
    return np.array(ms), hs


def scaled_minimum(schedule: DiscountSchedule) -> np.ndarray:
    """``(1 - alpha) m_alpha`` per schedule point, formed without the large ``m_alpha``."""
    return np.array([sol.g + (1 - sol.alpha) * np.min(sol.u) for sol in schedule.solutions])


@dataclass
class RhoEstimate:
    value: float
    spread: float
    series: np.ndarray
    mode: str
    converged: bool


def rho_star(schedule: DiscountSchedule, mode: str = "pc_min", anchor: int | None = None,
             window: int = DEFAULT_WINDOW, spread_limit: float | None = None) -> RhoEstimate:
    """Estimate the optimal average cost from the discounted solutions.

    ``uc_anchor``: last value of ``(1 - alpha) v_alpha(anchor)``; ``pc_min``:
    running maximum of ``(1 - alpha) m_alpha`` over the tail window.  The
    spread is the range of the series over the last ``window`` points; if it
    exceeds ``spread_limit`` the estimate is flagged as not converged.
    """
    if len(schedule) < 3:
        raise ValueError("need at least 3 schedule points")
    if mode == "uc_anchor":
        if anchor is None:
            raise ValueError("uc_anchor mode needs an anchor state")
        series = np.array([sol.scaled(anchor) for sol in schedule.solutions])
        value = float(series[-1])
    elif mode == "pc_min":
        series = scaled_minimum(schedule)
        value = float(np.max(series[-window:]))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    tail = series[-window:]
    spread = float(tail.max() - tail.min())
    converged = spread_limit is None or spread <= spread_limit
    if not converged:
        log.warning("rho* spread %.3g exceeds limit %.3g", spread, spread_limit)
    return RhoEstimate(value, spread, series, mode, converged)


# ---------------------------------------------------------------------------
# envelopes and residuals


def lower_envelope(h) -> tuple[list[np.ndarray], np.ndarray]:
    """Suffix minima ``min_{m >= n} h_m``; the limit is the envelope of the whole sequence."""
    h = [np.asarray(x, dtype=float) for x in h]
    if not h:
        raise ValueError("empty sequence")
    seq = [None] * len(h)
    acc = h[-1].copy()
    for n in range(len(h) - 1, -1, -1):
        acc = np.minimum(acc, h[n])
        seq[n] = acc.copy()
    return seq, seq[0].copy()


def upper_envelope(h) -> tuple[list[np.ndarray], np.ndarray]:
    """Suffix maxima ``max_{m >= n} h_m``; mirror image of :func:`lower_envelope`."""
    seq, lim = lower_envelope([-np.asarray(x, dtype=float) for x in h])
    return [-s for s in seq], -lim


def acoi_residual(model: MdpModel, rho: float, h) -> np.ndarray:
    """``rho + h - T h``; the inequality holds on the grid iff the minimum is >= -tol."""
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("h must be finite")
    return rho + h - bracket(model, h, 1.0).min(axis=1)


def reverse_inequality_residual(model: MdpModel, rho: float, h_bar) -> np.ndarray:
    """``T h_bar - rho - h_bar``; the reverse inequality holds iff the minimum is >= -tol."""
    h_bar = np.asarray(h_bar, dtype=float)
    if not np.all(np.isfinite(h_bar)):
        raise ValueError("h_bar must be finite")
    return bracket(model, h_bar, 1.0).min(axis=1) - rho - h_bar


def egoroff_diagnostic(h_lower_seq, h_limit, nu, eps: float) -> np.ndarray:
    """``nu{s : h_limit(s) - h_n(s) > eps}`` for each member of the sequence."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0) or not np.all(np.isfinite(nu)):
        raise ValueError("nu must be a finite nonnegative vector")
    h_limit = np.asarray(h_limit, dtype=float)
    return np.array([float(nu[(h_limit - np.asarray(hn)) > eps].sum()) for hn in h_lower_seq])


def extract_acoi_policy(model: MdpModel, rho: float, h, mode: str = "stationary", eps: float = 0.01,
                        tol: float = 1e-6, stages: int = 8):
    """Optimal (or eps-optimal) policy from an ACOI pair.

    On a finite grid the minimum over actions is attained, so the exact
    argmin (lowest index on ties) is an eps-argmin for every eps.  In
    ``markov_halving`` mode stage k uses ``eps_k = 2**-k``; all stages then
    coincide, which is asserted.
    """
    r = acoi_residual(model, rho, h)
    if r.min() < -tol:
        raise ValueError(f"ACOI residual {r.min():.3g} below -tol at state {int(np.argmin(r))}")
    choice = greedy(bracket(model, h, 1.0))
    if mode == "stationary":
        return DeterministicPolicy(choice)
    if mode == "markov_halving":
        # stage k needs an eps_k-argmin with eps_k = 2**-k; the exact argmin qualifies for every k
        pols = [DeterministicPolicy(greedy(bracket(model, h, 1.0))) for _ in range(stages)]
        assert all(np.array_equal(p.choice, choice) for p in pols)
        return MarkovPolicy(pols, DeterministicPolicy(choice))
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class VanishingDiscountResult:
    rho_star: float
    rho_spread: float
    rho_series: np.ndarray
    rho_converged: bool
    h_lower: np.ndarray
    h_upper: np.ndarray
    lower_seq: list[np.ndarray]
    upper_seq: list[np.ndarray]
    full_lower_seq: list[np.ndarray]
    h_seq: list[np.ndarray]
    reference: dict
    acoi_residuals: np.ndarray
    reverse_residuals: np.ndarray
    h_norms: np.ndarray
    envelope_spread: float
    window: int
    schedule: DiscountSchedule
    unattained_states: np.ndarray
    full_vs_tail_gap: float

    @property
    def acoi_min(self) -> float:
        return float(self.acoi_residuals.min())

    @property
    def reverse_min(self) -> float:
        return float(self.reverse_residuals.min())

    @property
    def acoe_gap(self) -> float:
        """Largest strict slack in the ACOI (reported, never asserted to vanish)."""
        return float(self.acoi_residuals.max())


def default_anchor(model: MdpModel) -> int:
    """Cell containing 0, or the cell nearest to 0 when 0 is off the grid."""
    idx = model.grid.locate(0.0)
    return model.grid.nearest(0.0) if idx is None else idx


def run_vanishing_discount(model: MdpModel, alphas=None, anchor: int | None = None, window: int = DEFAULT_WINDOW,
                           tol: float = DEFAULT_TOL, spread_limit: float | None = None, floor: float = DEFAULT_FLOOR,
                           schedule: DiscountSchedule | None = None) -> VanishingDiscountResult:
    if schedule is None:
        schedule = solve_schedule(model, alphas, tol=tol, floor=floor)
    if len(schedule) < max(3, window):
        raise ValueError("schedule shorter than the tail window")
    w = model.weight.values if model.weight is not None else np.ones(model.n_states)
    if model.model_class == "UC":
        anchor = default_anchor(model) if anchor is None else anchor
        hs = uc_relative_values(schedule, anchor)
        est = rho_star(schedule, "uc_anchor", anchor, window, spread_limit)
        reference = {"kind": "anchor", "anchor": anchor}
    else:
        ms, hs = pc_relative_values(schedule)
        est = rho_star(schedule, "pc_min", window=window, spread_limit=spread_limit)
        reference = {"kind": "minimum", "m_alpha": ms, "scaled_m_alpha": scaled_minimum(schedule)}

    finite = np.all([np.isfinite(h) for h in hs], axis=0)
    if not finite.all():
        log.warning("%d state(s) with infinite relative value are excluded", int((~finite).sum()))
    hs_f = [np.where(finite, h, 0.0) for h in hs]
    tail = hs_f[-window:]
    lower_seq, h_lower = lower_envelope(tail)
    upper_seq, h_upper = upper_envelope(tail)
    full_lower_seq, h_lower_full = lower_envelope(hs_f)

    acoi = acoi_residual(model, est.value, h_lower)
    rev = reverse_inequality_residual(model, est.value, h_upper)
    # states outside the finite set have no meaningful residual
    acoi = np.where(finite, acoi, np.inf)
    rev = np.where(finite, rev, np.inf)
    norms = np.array([weighted_norm(h, w) for h in hs_f])

    # pointwise liminf visibly unattained: still strictly decreasing at the last point
    unattained = np.flatnonzero(finite & (hs_f[-1] < hs_f[-2] - 1e-9 * np.maximum(1, np.abs(hs_f[-2]))))
    if model.model_class == "PC" and len(unattained):
        log.info("%d state(s) where the relative values are still decreasing at the last alpha", len(unattained))
    return VanishingDiscountResult(
        rho_star=est.value, rho_spread=est.spread, rho_series=est.series, rho_converged=est.converged,
        h_lower=h_lower, h_upper=h_upper, lower_seq=lower_seq, upper_seq=upper_seq,
        full_lower_seq=full_lower_seq, h_seq=hs, reference=reference, acoi_residuals=acoi,
        reverse_residuals=rev, h_norms=norms, envelope_spread=float(np.max(h_upper - h_lower)),
        window=window, schedule=schedule, unattained_states=unattained,
        full_vs_tail_gap=float(np.max(h_lower - h_lower_full)),
    )
