"""Numerical checks of the model hypotheses behind the ACOI and minimum-pair results.

Every check returns an :class:`AssumptionEntry` with a stable condition id,
fitted constants, the worst location and a signed margin.  Conditions that
involve limits are judged from tail trends with explicit thresholds, so a
"pass" is evidence at the current discretization, not a proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discounted import DiscountedSolution
from .distributions import Law, mgf_numeric
from .model import MdpModel, UcParameters, evaluate_policy_average_cost
from .report import FAIL, INCONCLUSIVE, PASS, AssumptionEntry

LAMBDA_GRID = np.round(np.arange(100) * 0.01, 2)
TRUNCATION_RATIO = 0.1
GROWTH_TOL = 0.01

# condition ids
UC_MODEL = "uc_model"
DRIFT_EXPONENTIAL = "drift_exponential"
H_FAMILY_BOUNDED = "h_family_bounded"
COMPACT_ACTION_INF = "compact_action_inf"
MAJORIZATION = "majorization"
MAJORIZATION_BAND = "majorization_band"
UNIFORM_INTEGRABILITY = "uniform_integrability"
CONDITION_G = "condition_G"
CONDITION_B = "condition_B"
SU_COERCIVITY = "su_coercivity"
CONDITION_IDS = (UC_MODEL, DRIFT_EXPONENTIAL, H_FAMILY_BOUNDED, COMPACT_ACTION_INF, MAJORIZATION,
                 MAJORIZATION_BAND, UNIFORM_INTEGRABILITY, CONDITION_G, CONDITION_B, SU_COERCIVITY)


def _max_expected(model: MdpModel, g: np.ndarray, mask=None) -> np.ndarray:
    """``max_{a in mask(s)} sum_s' g(s') q(s'|s,a)`` per state (-inf if the mask is empty)."""
    mask = model.admissible if mask is None else mask & model.admissible
    e = model.probs @ g
    return np.where(mask, e, -np.inf).max(axis=1)


# ---------------------------------------------------------------------------
# weighted-norm model class


def check_uc_model(model: MdpModel, w=None, lam: float | None = None, b: float | None = None,
                   lam_grid=LAMBDA_GRID) -> tuple[AssumptionEntry, UcParameters | None]:
    """Fit (or verify) the constants of the weighted-norm model class.

    ``c_hat = max |c|/w`` over admissible pairs.  With ``lam``/``b`` given the
    drift inequality ``max_a E w <= lam w + b`` is verified pointwise.
    Otherwise ``b(lam) = max_s (max_a E w - lam w)^+`` is scanned over
    ``lam_grid`` and the lam minimizing the average-cost bound
    ``c_hat b / (1 - lam)`` is kept (smallest lam on ties).  If the fitted b
    exceeds a tenth of ``max w`` (for a non-constant ``w``) the drift is
    being absorbed by the truncation and the result is inconclusive.
    """
    w = np.asarray(getattr(w, "values", w) if w is not None else model.weight.values, dtype=float)
    adm = model.admissible
    absc = np.where(adm, np.abs(model.costs.values), 0.0)
    if not np.all(np.isfinite(absc)):
        s = int(np.argwhere(~np.isfinite(absc))[0][0])
        return AssumptionEntry(UC_MODEL, FAIL, location=s, message="non-finite cost"), None
    c_hat = float(np.max(absc / w[:, None]))
    Ew = _max_expected(model, w)

    if lam is not None:
        b = 0.0 if b is None else float(b)
        slack = lam * w + b - Ew
        k = int(np.argmin(slack))
        ok = slack[k] >= -1e-12 * max(1.0, Ew[k]) and lam < 1
        consts = {"c_hat": c_hat, "lam": lam, "b": b, "fitted": False}
        params = UcParameters(c_hat, lam, b) if ok else None
        return AssumptionEntry(UC_MODEL, PASS if ok else FAIL, consts, location=k, margin=float(slack[k]),
                               message="supplied constants" + ("" if ok else " violate the drift inequality")), params

    lam_grid = np.asarray(lam_grid, dtype=float)
    bs = np.array([max(0.0, float(np.max(Ew - l * w))) for l in lam_grid])
    scale = c_hat if c_hat > 0 else 1.0
    score = scale * bs / (1 - lam_grid)
    i = int(np.argmin(score))  # first minimizer = smallest lambda
    lam_f, b_f = float(lam_grid[i]), float(bs[i])
    slack = lam_f * w + b_f - Ew
    k = int(np.argmin(slack))
    consts = {"c_hat": c_hat, "lam": lam_f, "b": b_f, "fitted": True, "bound": c_hat * b_f / (1 - lam_f)}
    # with a bounded (constant) weight the truncated grid cannot hide a missing drift
    if np.ptp(w) > 0 and b_f > TRUNCATION_RATIO * float(np.max(w)):
        consts["reason"] = "truncation"
        return AssumptionEntry(UC_MODEL, INCONCLUSIVE, consts, location=k, margin=float(slack[k]),
                               message=f"fitted b={b_f:.4g} is comparable to max w; drift is not demonstrated "
                                       "beyond the truncated grid"), None
    return AssumptionEntry(UC_MODEL, PASS, consts, location=k, margin=float(slack[k])), UcParameters(c_hat, lam_f, b_f)


def check_drift_exponential(z_laws, kappa: float) -> tuple[AssumptionEntry, float]:
    """``lam = sup E exp(kappa Z)`` over the supplied laws of ``Z(x, a)``, by quadrature.

    ``z_laws`` maps a location (e.g. ``(x, a)``) to a :class:`Law`, or is a
    plain sequence of laws.  Passes iff ``lam < 1``.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    items = z_laws.items() if isinstance(z_laws, dict) else enumerate(z_laws)
    lam, where = -math.inf, None
    for loc, law in items:
        m = mgf_numeric(law, kappa)
        if not math.isfinite(m):
            return AssumptionEntry(DRIFT_EXPONENTIAL, FAIL, {"kappa": kappa, "lam": math.inf}, location=loc,
                                   message="moment generating function diverges"), math.inf
        if m > lam:
            lam, where = m, loc
    ok = lam < 1
    return AssumptionEntry(DRIFT_EXPONENTIAL, PASS if ok else FAIL, {"kappa": kappa, "lam": lam}, location=where,
                           margin=1 - lam), lam


# ---------------------------------------------------------------------------
# relative-value conditions


def _growth(x: np.ndarray) -> float:
    """Relative growth over the last three entries."""
    a, b = float(x[-3]), float(x[-1])
    if abs(b - a) <= 1e-12 * max(1.0, abs(a)):
        return 0.0
    return (b - a) / max(abs(a), 1e-300)


def check_h_family_bounded(schedule, w, anchor: int) -> AssumptionEntry:
    """``sup_alpha ||v_alpha - v_alpha(anchor)||_w`` over the schedule and its tail trend."""
    w = np.asarray(getattr(w, "values", w), dtype=float)
    norms = []
    for sol in schedule.solutions:
        h = sol.u - sol.u[anchor]
        norms.append(float(np.max(np.abs(h) / w)) if np.all(np.isfinite(h)) else math.inf)
    norms = np.array(norms)
    consts = {"sup": float(norms.max()), "tail": float(norms[-1]), "norms": norms}
    if len(norms) < 3:
        return AssumptionEntry(H_FAMILY_BOUNDED, INCONCLUSIVE, consts, message="fewer than 3 schedule points")
    if not np.all(np.isfinite(norms)):
        return AssumptionEntry(H_FAMILY_BOUNDED, FAIL, consts, message="infinite relative value")
    growth = _growth(norms)
    consts["growth"] = growth
    ok = growth < GROWTH_TOL
    return AssumptionEntry(H_FAMILY_BOUNDED, PASS if ok else FAIL, consts, margin=GROWTH_TOL - growth,
                           message="" if ok else "relative values diverge along the schedule")


def check_condition_B(schedule, variant: str = "liminf") -> AssumptionEntry:
    """Finiteness of ``v_alpha - m_alpha`` per state: tail minimum (``liminf``) or schedule maximum (``sup``)."""
    hs = []
    for sol in schedule.solutions:
        k = int(np.argmin(sol.u))
        hs.append(sol.u - sol.u[k])
    H = np.array(hs)  # (n_alpha, S)
    if variant == "liminf":
        value = H[-3:].min(axis=0)
    elif variant == "sup":
        value = H.max(axis=0)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    cid = CONDITION_B if variant == "liminf" else CONDITION_B + "_sup"
    consts = {"variant": variant, "per_state": value, "max": float(np.max(value))}
    bad_inf = np.flatnonzero(~np.isfinite(value))
    if len(bad_inf):
        return AssumptionEntry(cid, FAIL, consts, location=int(bad_inf[0]), message="infinite relative value")
    # trend over the last three points, state by state
    a, b = H[-3], H[-1]
    growth = np.where(np.abs(b - a) <= 1e-12 * np.maximum(1, np.abs(a)), 0.0, (b - a) / np.maximum(np.abs(a), 1e-300))
    k = int(np.argmax(growth))
    ok = growth[k] < GROWTH_TOL
    return AssumptionEntry(cid, PASS if ok else FAIL, consts, location=k, margin=float(GROWTH_TOL - growth[k]),
                           message="" if ok else f"relative value diverges at state {k}")


def check_compact_action_inf(model: MdpModel, schedule, K, eps: float, tail: int = 3) -> AssumptionEntry:
    """``min_{a in K} {c + alpha E v_alpha} <= v_alpha + eps`` at every state, for the tail of the schedule."""
    K = np.asarray(K, dtype=bool) & model.admissible
    empty = np.flatnonzero(~K.any(axis=1))
    if len(empty):
        return AssumptionEntry(COMPACT_ACTION_INF, FAIL, {"eps": eps}, location=int(empty[0]),
                               message="K has no admissible action at this state")
    worst, where = -math.inf, None
    for sol in schedule.solutions[-tail:]:
        viol = _k_violation(model, sol, K)
        k = int(np.argmax(viol))
        if viol[k] > worst:
            worst, where = float(viol[k]), (k, float(sol.alpha))
    ok = worst <= eps
    return AssumptionEntry(COMPACT_ACTION_INF, PASS if ok else FAIL, {"eps": eps, "max_violation": worst},
                           location=where, margin=eps - worst)


def _k_violation(model: MdpModel, sol: DiscountedSolution, K: np.ndarray) -> np.ndarray:
    finite = np.isfinite(sol.u)
    u = np.where(finite, sol.u, 0.0)
    q = model.c + sol.alpha * (model.probs @ u)
    qk = np.where(K, q, np.inf).min(axis=1)
    return np.where(finite, qk - u - sol.g, -np.inf)


# ---------------------------------------------------------------------------
# majorization and uniform integrability


@dataclass
class MajorizingMeasure:
    cell_masses: np.ndarray
    atoms: list = field(default_factory=list)
    total_mass: float = 0.0

    def __post_init__(self):
        self.cell_masses = np.asarray(self.cell_masses, dtype=float)
        if np.any(self.cell_masses < 0):
            raise ValueError("cell masses must be nonnegative")
        self.total_mass = float(self.cell_masses.sum() + sum(m for _, m in self.atoms))

    def cell_total(self, grid) -> np.ndarray:
        """Cell masses with the atoms dropped into their cells."""
        out = self.cell_masses.copy()
        for point, mass in self.atoms:
            idx = grid.locate(point)
            if idx is not None:
                out[idx] += mass
        return out


def _discrete_majorant(model: MdpModel, rows_mask: np.ndarray, cells=None) -> MajorizingMeasure:
    """Cellwise max of the kernel rows selected by ``rows_mask`` (S x A); atoms tracked separately."""
    P = model.probs
    atoms = model.kernel.atoms if model.kernel.atoms is not None else np.zeros_like(P)
    sel = rows_mask.reshape(-1)
    dens = (P - atoms).reshape(-1, P.shape[2])[sel]
    at = atoms.reshape(-1, P.shape[2])[sel]
    cell = np.clip(dens.max(axis=0), 0.0, None) if len(dens) else np.zeros(P.shape[2])
    amax = at.max(axis=0) if len(at) else np.zeros(P.shape[2])
    if cells is not None:
        keep = np.zeros(P.shape[2], dtype=bool)
        keep[cells] = True
        cell = np.where(keep, cell, 0.0)
        amax = np.where(keep, amax, 0.0)
    atom_list = [(float(model.grid.centers[j]), float(amax[j])) for j in np.flatnonzero(amax > 0)]
    return MajorizingMeasure(cell, atom_list)


def continuum_majorant_mass(model: MdpModel, states, K: np.ndarray, points_per_cell: int = 8, cells=None) -> float:
    """``max_{s in states} int sup_{a in K(s)} f(y|x_s, a) dy`` plus the sup of atom masses.

    Integrates the source density on a fine midpoint grid over the state
    range (or the given cells) and is independent of the discretized kernel.
    """
    src = model.source
    if src is None:
        raise ValueError("model has no density source")
    g = model.grid
    idx = np.arange(len(g)) if cells is None else np.asarray(cells)
    lo, w = g.lower_edges[idx], g.widths[idx]
    offs = (np.arange(points_per_cell) + 0.5) / points_per_cell
    ys = (lo[:, None] + offs[None, :] * w[:, None]).ravel()
    dy = np.repeat(w / points_per_cell, points_per_cell)
    best = 0.0
    for s in states:
        x = g.centers[s]
        acts = np.flatnonzero(K[s] & model.admissible[s])
        sup = np.zeros_like(ys)
        atom_sup: dict[float, float] = {}
        for a in acts:
            av = model.actions.values[a]
            sup = np.maximum(sup, src.density(x, av, ys))
            if src.atoms is not None:
                for p, m in src.atoms(x, av):
                    if lo[0] <= p <= lo[-1] + w[-1]:
                        atom_sup[p] = max(atom_sup.get(p, 0.0), m)
        best = max(best, float(np.sum(sup * dy)) + sum(atom_sup.values()))
    return best


def check_majorization(model: MdpModel, K=None, variant: str = "per_state", O=None, D=None,
                       refinements: list | None = None, growth_tol: float = 0.1, states=None,
                       continuum: bool = True) -> tuple[MajorizingMeasure | list, AssumptionEntry]:
    """Finite measure majorizing the kernel rows.

    ``per_state``: for each state the cellwise max over ``a in K(s)``; the
    returned list holds one measure per state and the entry reports the
    largest total mass.  ``global_band``: one measure over the cells in
    ``O`` minus ``D``, maximized over every admissible pair.

    For density-backed kernels the continuum integral of the density
    supremum is computed too.  ``refinements`` (the same model family at
    finer grids / wider action ranges) turns this into a divergence study:
    if the continuum mass keeps growing by more than ``growth_tol`` per
    refinement, no finite measure majorizes the family and the check fails.
    """
    S, A = model.n_states, model.n_actions
    K = np.ones((S, A), dtype=bool) if K is None else np.asarray(K, dtype=bool)
    K = K & model.admissible
    consts: dict = {"variant": variant}
    if variant == "per_state":
        measures = []
        for s in range(S):
            mask = np.zeros((S, A), dtype=bool)
            mask[s] = K[s]
            measures.append(_discrete_majorant(model, mask))
        totals = np.array([m.total_mass for m in measures])
        k = int(np.argmax(totals))
        consts.update(discrete_mass=float(totals[k]), atom_mass=float(max(sum(m for _, m in mm.atoms) for mm in measures)))
        result: MajorizingMeasure | list = measures
        location = k
        st = range(S) if states is None else states
        cells = None
    elif variant == "global_band":
        if O is None:
            raise ValueError("global_band needs the band O")
        O = np.asarray(O, dtype=int)
        D = np.zeros(0, dtype=int) if D is None else np.asarray(D, dtype=int)
        cells = np.setdiff1d(O, D)
        measure = _discrete_majorant(model, model.admissible.copy(), cells)
        consts.update(discrete_mass=measure.total_mass, atom_mass=float(sum(m for _, m in measure.atoms)))
        result = measure
        location = None
        K = model.admissible
        st = range(S) if states is None else states
        if len(D):
            consts["continuity_modulus_D"] = _continuity_modulus(model, D)
    else:
        raise ValueError(f"unknown variant {variant!r}")

    if consts["atom_mass"] > 0:
        consts["atoms_included"] = True
    status, msg = PASS, ""
    if continuum and model.source is not None:
        masses = [continuum_majorant_mass(model, st, K, cells=cells)]
        for ref in refinements or []:
            Kr = ref.admissible if variant == "global_band" else np.ones_like(ref.admissible)
            cr = None
            if variant == "global_band":
                cr = np.flatnonzero((ref.grid.centers >= model.grid.centers[cells].min())
                                    & (ref.grid.centers <= model.grid.centers[cells].max()))
            masses.append(continuum_majorant_mass(ref, range(ref.n_states), Kr, cells=cr))
        consts["continuum_masses"] = masses
        if not all(math.isfinite(m) for m in masses):
            status, msg = FAIL, "continuum majorant integral is infinite"
        elif len(masses) > 1:
            ratios = [masses[i + 1] / masses[i] for i in range(len(masses) - 1)]
            consts["refinement_ratios"] = ratios
            if all(r > 1 + growth_tol for r in ratios):
                status, msg = FAIL, "majorant mass diverges under refinement; no finite measure majorizes the family"
    if status == PASS and not math.isfinite(consts["discrete_mass"]):
        status, msg = FAIL, "discrete majorant mass is infinite"
    cid = MAJORIZATION if variant == "per_state" else MAJORIZATION_BAND
    return result, AssumptionEntry(cid, status, consts, location=location, message=msg)


def _continuity_modulus(model: MdpModel, D: np.ndarray) -> float:
    """Largest jump of kernel rows / costs between adjacent cells of D (evidence, not proof)."""
    D = np.sort(D)
    pairs = [(i, j) for i, j in zip(D[:-1], D[1:]) if j == i + 1]
    if not pairs:
        return 0.0
    jumps = []
    for i, j in pairs:
        dq = np.abs(model.probs[i] - model.probs[j]).sum(axis=1).max()
        dc = np.nanmax(np.abs(np.where(model.admissible[i] & model.admissible[j],
                                       model.costs.values[i] - model.costs.values[j], 0.0)))
        jumps.append(max(dq, dc))
    return float(max(jumps))


def uniform_integrability_tails(model: MdpModel, g, K, levels, states=None) -> np.ndarray:
    """``sup_{s, a in K(s)} sum_{g(s') >= l} g(s') q(s'|s,a)`` for each level ``l``."""
    g = np.asarray(getattr(g, "values", g), dtype=float)
    if np.any(g < 0):
        raise ValueError("g must be nonnegative")
    K = (np.ones(model.admissible.shape, dtype=bool) if K is None else np.asarray(K, dtype=bool)) & model.admissible
    st = np.arange(model.n_states) if states is None else np.asarray(states)
    out = []
    for lvl in levels:
        gt = np.where(g >= lvl, g, 0.0)
        e = model.probs[st] @ gt
        out.append(float(np.where(K[st], e, 0.0).max()))
    return np.array(out)


def check_uniform_integrability(model: MdpModel, g, K=None, levels=None, states=None,
                                tol: float = 1e-6) -> AssumptionEntry:
    """Tail integrals of ``g`` against the kernel rows must vanish as the level grows.

    ``states`` restricts the check (default: all); ``levels`` default to a
    geometric ladder between the median and the 90th percentile of g.  Passes
    iff the tail at the largest level is at most ``tol``.
    """
    g = np.asarray(getattr(g, "values", g), dtype=float)
    if levels is None:
        lo, hi = np.quantile(g, 0.5), np.quantile(g, 0.9)
        levels = np.geomspace(max(lo, 1e-12), max(hi, lo * 1.0001, 1e-12), 6)
    levels = np.asarray(levels, dtype=float)
    if np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be increasing")
    tails = uniform_integrability_tails(model, g, K, levels, states)
    consts = {"levels": levels, "tails": tails}
    ok = tails[-1] <= tol
    return AssumptionEntry(UNIFORM_INTEGRABILITY, PASS if ok else FAIL, consts, margin=float(tol - tails[-1]),
                           message="" if ok else "tail integral does not vanish at the largest level")


# ---------------------------------------------------------------------------
# conditions for the nonnegative-cost model


def check_condition_G(model: MdpModel, policy, start: int, horizon: int = 4096, bound: float | None = None) -> AssumptionEntry:
    """Finite average cost of ``policy`` from ``start``, judged on doubling horizons up to ``horizon``."""
    hs = [2**k for k in range(4, int(math.log2(horizon)) + 1)]
    if len(hs) < 3:
        hs = [max(1, horizon // 4), max(1, horizon // 2), horizon]
    vals = np.array([evaluate_policy_average_cost(model, policy, n)[start] for n in hs])
    consts = {"horizons": hs, "averages": vals, "tail": float(vals[-1])}
    if bound is not None:
        consts["bound"] = bound
    if not np.all(np.isfinite(vals)):
        return AssumptionEntry(CONDITION_G, FAIL, consts, location=start, message="infinite average cost")
    # bounded tail: the last value must not exceed the earlier ones by more than a few percent
    growth = _growth(vals)
    ok = growth < 0.05 and (bound is None or vals[-1] <= bound + 1e-9)
    return AssumptionEntry(CONDITION_G, PASS if ok else FAIL, consts, location=start,
                           margin=None if bound is None else float(bound - vals[-1]))


def check_su_coercivity(model: MdpModel, K_n, A_n, threshold: float = 10.0) -> AssumptionEntry:
    """``m_n = min c`` off ``K_n x A_n`` must increase strictly and end above ``threshold``.

    A plateau fails; strict increase that has not reached the threshold is
    reported as inconclusive.
    """
    S, A = model.n_states, model.n_actions
    ms = []
    for Ks, As in zip(K_n, A_n):
        inside = np.zeros((S, A), dtype=bool)
        inside[np.ix_(np.asarray(Ks, dtype=int), np.asarray(As, dtype=int))] = True
        off = model.admissible & ~inside
        ms.append(float(model.costs.values[off].min()) if off.any() else math.inf)
    ms = np.array(ms)
    consts = {"m_n": ms, "threshold": threshold}
    fin = ms[np.isfinite(ms)]
    increasing = len(fin) >= 2 and np.all(np.diff(fin) > 0)
    if not increasing:
        k = int(np.argmin(np.diff(fin))) if len(fin) >= 2 else 0
        return AssumptionEntry(SU_COERCIVITY, FAIL, consts, location=k, message="cost off K_n x A_n does not grow")
    final = ms[-1]
    if final < threshold:
        return AssumptionEntry(SU_COERCIVITY, INCONCLUSIVE, consts, margin=float(final - threshold),
                               message="increasing but below the escape threshold")
    return AssumptionEntry(SU_COERCIVITY, PASS, consts, margin=float(final - threshold))
