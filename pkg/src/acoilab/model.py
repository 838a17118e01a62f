"""Discretized MDP data model, kernel discretization and exact policy evaluation.

A model is a finite grid of state cells, a finite action list with a per-state
admissibility mask, a transition tensor ``probs[s, a, s']`` and a cost table
``c[s, a]``.  Everything downstream (discounted solver, vanishing-discount
pipeline, assumption checks, occupation measures) works on this object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .report import FAIL, PASS, AssumptionEntry, AssumptionReport

BOUNDARY_MODES = ("truncate_renormalize", "absorb_edge")
MODEL_CLASSES = ("PC", "UC")
ROW_TOL = 1e-12


class DegenerateKernelError(ValueError):
    """A kernel row carries no mass before normalization."""

    def __init__(self, state: int, action: int):
        super().__init__(f"degenerate kernel row at (state={state}, action={action}): zero mass before normalization")
        self.state = state
        self.action = action


@dataclass
class StateGrid:
    centers: np.ndarray
    widths: np.ndarray
    boundary_mode: str = "truncate_renormalize"

    def __post_init__(self):
        self.centers = np.atleast_1d(np.asarray(self.centers, dtype=float))
        self.widths = np.atleast_1d(np.asarray(self.widths, dtype=float))
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ValueError(f"boundary_mode must be one of {BOUNDARY_MODES}, got {self.boundary_mode!r}")

    @classmethod
    def uniform(cls, lo: float, hi: float, cells: int, boundary_mode: str = "truncate_renormalize") -> "StateGrid":
        if cells < 1 or not hi > lo:
            raise ValueError("need hi > lo and at least one cell")
        edges = np.linspace(lo, hi, cells + 1)
        return cls(0.5 * (edges[:-1] + edges[1:]), np.diff(edges), boundary_mode)

    def __len__(self):
        return len(self.centers)

    @property
    def lower_edges(self) -> np.ndarray:
        return self.centers - 0.5 * self.widths

    @property
    def upper_edges(self) -> np.ndarray:
        return self.centers + 0.5 * self.widths

    @property
    def lo(self) -> float:
        return float(self.lower_edges[0])

    @property
    def hi(self) -> float:
        return float(self.upper_edges[-1])

    def locate(self, x: float) -> int | None:
        """Index of the cell containing ``x`` (closed on the right at the top edge), or None."""
        if x < self.lo or x > self.hi:
            return None
        idx = int(np.searchsorted(self.upper_edges, x, side="right"))
        return min(idx, len(self) - 1)

    def nearest(self, x: float) -> int:
        return int(np.argmin(np.abs(self.centers - x)))


@dataclass
class ActionStructure:
    values: np.ndarray
    admissible: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        self.admissible = np.atleast_2d(np.asarray(self.admissible, dtype=bool))
        if self.admissible.shape[1] != len(self.values):
            raise ValueError("admissible mask must have one column per action")

    @classmethod
    def full(cls, values: Sequence[float], n_states: int) -> "ActionStructure":
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(values, np.ones((n_states, len(values)), dtype=bool))

    def __len__(self):
        return len(self.values)


@dataclass
class DiscreteKernel:
    """Transition tensor ``probs[s, a, s']``.

    ``atoms`` optionally records the part of each row contributed by point
    masses and ``escaped`` the mass that left the grid before the boundary
    treatment; both are diagnostics only.
    """

    probs: np.ndarray
    atoms: np.ndarray | None = None
    escaped: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 3 or self.probs.shape[0] != self.probs.shape[2]:
            raise ValueError("kernel tensor must have shape (S, A, S)")

    @property
    def max_escaped(self) -> float:
        return 0.0 if self.escaped is None else float(np.max(self.escaped, initial=0.0))


@dataclass
class CostTable:
    values: np.ndarray
    model_class: str = "PC"

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.model_class not in MODEL_CLASSES:
            raise ValueError(f"model_class must be one of {MODEL_CLASSES}")


@dataclass
class WeightVector:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class UcParameters:
    c_hat: float
    lam: float
    b: float

    def __post_init__(self):
        if not (0.0 <= self.lam < 1.0):
            raise ValueError(f"lambda must lie in [0, 1), got {self.lam}")
        if self.c_hat < 0 or self.b < 0:
            raise ValueError("c_hat and b must be nonnegative")

    @property
    def average_cost_bound(self) -> float:
        """Weighted-norm bound on the average cost of any policy."""
        return self.c_hat * self.b / (1.0 - self.lam)


@dataclass
class DeterministicPolicy:
    choice: np.ndarray

    def __post_init__(self):
        self.choice = np.atleast_1d(np.asarray(self.choice, dtype=int))

    def __len__(self):
        return len(self.choice)

    def as_matrix(self, n_actions: int) -> np.ndarray:
        m = np.zeros((len(self.choice), n_actions))
        m[np.arange(len(self.choice)), self.choice] = 1.0
        return m


@dataclass
class MarkovPolicy:
    """Finite list of stage policies followed forever by ``tail``."""

    stages: list[DeterministicPolicy]
    tail: DeterministicPolicy

    def at(self, k: int) -> DeterministicPolicy:
        return self.stages[k] if k < len(self.stages) else self.tail


@dataclass
class KernelSource:
    """Continuous description a kernel was discretized from (kept for continuum checks).

    ``density(x, a, y)`` must accept an array ``y``; ``atoms(x, a)`` returns
    ``[(point, mass), ...]``; ``density_bound`` is an optional uniform upper
    bound on the density.
    """

    density: Callable[[float, float, np.ndarray], np.ndarray]
    atoms: Callable[[float, float], list] | None = None
    tail_mass: Callable[[float, float], tuple[float, float]] | None = None
    density_bound: float | None = None


@dataclass
class MdpModel:
    grid: StateGrid
    actions: ActionStructure
    kernel: DiscreteKernel
    costs: CostTable
    weight: WeightVector | None = None
    uc: UcParameters | None = None
    name: str = ""
    source: KernelSource | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.grid)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def model_class(self) -> str:
        return self.costs.model_class

    @property
    def admissible(self) -> np.ndarray:
        return self.actions.admissible

    @property
    def probs(self) -> np.ndarray:
        return self.kernel.probs

    @property
    def c(self) -> np.ndarray:
        """Cost table with +inf on inadmissible pairs."""
        return np.where(self.admissible, self.costs.values, np.inf)

    def expect(self, v: np.ndarray) -> np.ndarray:
        """``sum_{s'} q(s'|s,a) v(s')`` for every (s, a); infinite entries of v are handled."""
        return expect(self.probs, v)

    def first_admissible(self) -> np.ndarray:
        return np.argmax(self.admissible, axis=1)


def expect(probs: np.ndarray, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.all(np.isfinite(v)):
        return probs @ v
    finite = np.where(np.isfinite(v), v, 0.0)
    out = probs @ finite
    inf_mass = probs @ np.where(np.isposinf(v), 1.0, 0.0)
    out = np.where(inf_mass > 0, np.inf, out)
    return out


# ---------------------------------------------------------------------------
# kernel discretization


def discretize_density_kernel(
    density: Callable[[float, float, np.ndarray], np.ndarray],
    atoms: Callable[[float, float], list] | None,
    grid: StateGrid,
    actions: ActionStructure,
    tail_mass: Callable[[float, float], tuple[float, float]] | None = None,
) -> DiscreteKernel:
    """Turn a density-plus-atoms transition law into a row-stochastic tensor.

    Each admissible row is ``density(x, a, centers) * widths`` plus the atom
    masses dropped into their cells.  Mass that leaves the grid is handled by
    the grid's boundary mode: ``truncate_renormalize`` rescales the row,
    ``absorb_edge`` adds the escaping mass (given by ``tail_mass(x, a) ->
    (below, above)``) to the edge cells before the final normalization.
    Inadmissible rows are left at zero.
    """
    S, A = len(grid), len(actions)
    if actions.admissible.shape != (S, A):
        raise ValueError("admissible mask does not match grid/action sizes")
    if grid.boundary_mode == "absorb_edge" and tail_mass is None:
        raise ValueError("absorb_edge needs tail_mass(x, a) -> (below, above)")
    probs = np.zeros((S, A, S))
    atom_part = np.zeros((S, A, S))
    escaped = np.zeros((S, A))
    for s, x in enumerate(grid.centers):
        for a_idx, a in enumerate(actions.values):
            if not actions.admissible[s, a_idx]:
                continue
            dens = np.asarray(density(x, a, grid.centers), dtype=float)
            if np.any(dens < 0) or not np.all(np.isfinite(dens)):
                raise ValueError(f"negative or non-finite density sample at (state={s}, action={a_idx})")
            row = dens * grid.widths
            arow = np.zeros(S)
            below = above = 0.0
            for point, mass in (atoms(x, a) if atoms is not None else ()):
                if not 0.0 <= mass <= 1.0:
                    raise ValueError(f"atom mass {mass} outside [0, 1]")
                idx = grid.locate(point)
                if idx is None:
                    if point < grid.lo:
                        below += mass
                    else:
                        above += mass
                    continue
                arow[idx] += mass
            inside = row.sum() + arow.sum()
            if grid.boundary_mode == "absorb_edge":
                tb, ta = tail_mass(x, a)
                row[0] += tb + below
                row[-1] += ta + above
            escaped[s, a_idx] = max(0.0, 1.0 - inside)
            amass, cmass = arow.sum(), row.sum()
            if amass + cmass <= 0.0:
                raise DegenerateKernelError(s, a_idx)
            # atom masses are exact; the continuous part absorbs the quadrature and truncation error
            rest = max(0.0, 1.0 - amass)
            if cmass > 0.0 and amass <= 1.0:
                row = row * (rest / cmass)
            elif amass > 0.0 and amass <= 1.0:
                # no continuous mass resolved on the grid: keep the remainder in the atom cell
                row = np.zeros(S)
                row[int(np.argmax(arow))] = rest
            else:
                row, arow = row / (amass + cmass), arow / (amass + cmass)
            probs[s, a_idx] = row + arow
            atom_part[s, a_idx] = arow
    return DiscreteKernel(probs, atoms=atom_part, escaped=escaped)


# ---------------------------------------------------------------------------
# norms and policy evaluation


def weighted_norm(v, w) -> float:
    """``max_s |v[s]| / w[s]``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(getattr(w, "values", w), dtype=float)
    if v.shape != w.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {w.shape}")
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(v) / w))


def _check_admissible(model: MdpModel, policy: DeterministicPolicy):
    if len(policy.choice) != model.n_states:
        raise ValueError("policy length does not match the number of states")
    bad = ~model.admissible[np.arange(model.n_states), policy.choice]
    if np.any(bad):
        raise ValueError(f"policy picks an inadmissible action at state {int(np.flatnonzero(bad)[0])}")


def policy_matrix(model: MdpModel, policy) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix and cost vector of a stationary policy.

    ``policy`` is a DeterministicPolicy or a randomized (S, A) row-stochastic array.
    """
    if isinstance(policy, DeterministicPolicy):
        _check_admissible(model, policy)
        idx = np.arange(model.n_states)
        return model.probs[idx, policy.choice], model.c[idx, policy.choice]
    mu = np.asarray(policy, dtype=float)
    if np.any((mu > 0) & ~model.admissible):
        raise ValueError("randomized policy puts mass on inadmissible actions")
    P = np.einsum("sa,sat->st", mu, model.probs)
    c = np.where(mu > 0, model.c, 0.0)
    c = np.einsum("sa,sa->s", mu, c)
    return P, c


def evaluate_policy_average_cost(model: MdpModel, policy, horizon: int) -> np.ndarray:
    """``J_n(pi, .) / n`` for ``n = horizon`` by exact backward recursion.

    Works for stationary (deterministic or randomized) and Markov policies.
    """
    if horizon < 1:
        raise ValueError("horizon must be a positive integer")
    if isinstance(policy, MarkovPolicy):
        u = np.zeros(model.n_states)
        mats = {}
        for k in range(horizon - 1, -1, -1):
            f = policy.at(k)
            key = id(f)
            if key not in mats:
                mats[key] = policy_matrix(model, f)
            P, c = mats[key]
            u = c + expect(P, u)
        return u / horizon
    P, c = policy_matrix(model, policy)
    u = np.zeros(model.n_states)
    for _ in range(horizon):
        u = c + expect(P, u)
    return u / horizon


# ---------------------------------------------------------------------------
# validation


def validate_model(model: MdpModel) -> AssumptionReport:
    """Check every structural invariant; violations become failing report entries."""
    report = AssumptionReport()
    S, A = model.n_states, model.n_actions
    g = model.grid

    problems = []
    if len(g.centers) != len(g.widths):
        problems.append(("lengths", None))
    if len(g.centers) < 2 and not model.meta.get("finite_oracle"):
        problems.append(("fewer than 2 cells", None))
    if np.any(g.widths <= 0):
        problems.append(("nonpositive width", int(np.flatnonzero(g.widths <= 0)[0])))
    if len(g.centers) > 1 and np.any(np.diff(g.centers) <= 0):
        problems.append(("centers not increasing", int(np.flatnonzero(np.diff(g.centers) <= 0)[0])))
    report.add(_entry("grid", problems))

    problems = []
    if model.admissible.shape != (S, A):
        problems.append(("mask shape", model.admissible.shape))
    else:
        empty = np.flatnonzero(~model.admissible.any(axis=1))
        problems += [("no admissible action", int(s)) for s in empty]
    report.add(_entry("actions", problems))

    problems = []
    P = model.probs
    if P.shape != (S, A, S):
        problems.append(("kernel shape", P.shape))
    else:
        neg = np.argwhere(P < 0)
        problems += [("negative entry", tuple(int(i) for i in loc)) for loc in neg[:10]]
        sums = P.sum(axis=2)
        bad = np.argwhere(model.admissible & (np.abs(sums - 1.0) > ROW_TOL))
        problems += [(f"row sum {sums[s, a]:.15g}", (int(s), int(a))) for s, a in bad]
    report.add(_entry("kernel", problems))

    problems = []
    vals = model.costs.values
    if vals.shape != (S, A):
        problems.append(("cost shape", vals.shape))
    elif model.model_class == "PC":
        neg = np.argwhere(model.admissible & (vals < 0))
        problems += [("negative cost in PC model", (int(s), int(a))) for s, a in neg]
    else:
        bad = np.argwhere(model.admissible & ~np.isfinite(vals))
        problems += [("non-finite cost in UC model", (int(s), int(a))) for s, a in bad]
    report.add(_entry("costs", problems))

    problems = []
    if model.weight is not None:
        w = model.weight.values
        if w.shape != (S,):
            problems.append(("weight length", w.shape))
        elif np.any(w < 1.0):
            problems.append(("weight below 1", int(np.argmin(w))))
    if model.model_class == "UC" and (model.weight is None or model.uc is None):
        problems.append(("UC model without weight/constants", None))
    report.add(_entry("weight", problems))
    return report


def _entry(condition: str, problems: list) -> AssumptionEntry:
    if not problems:
        return AssumptionEntry(condition, PASS)
    what, where = problems[0]
    return AssumptionEntry(
        condition,
        FAIL,
        constants={"violations": [{"what": w, "location": loc} for w, loc in problems]},
        location=where,
        message=f"{len(problems)} violation(s); first: {what}",
    )
