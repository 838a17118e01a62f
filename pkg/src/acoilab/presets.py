"""Built-in model families: a dam/inventory model with exponential weight, a
piecewise-quadratic LQ-type model on an action lattice, and tiny closed-form
oracle models.

All numeric parameters of the presets are choices made for this package; the
defaults are picked so that the drift and majorization conditions hold (and
are verified at build time, not assumed).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import assumptions as av
from .distributions import Constant, Law, Laplace, Normal, TruncatedNormal, Uniform, difference
from .model import (
    ActionStructure,
    CostTable,
    DeterministicPolicy,
    DiscreteKernel,
    KernelSource,
    MdpModel,
    StateGrid,
    WeightVector,
    discretize_density_kernel,
)


class ModelBuildError(ValueError):
    pass


class DriftConditionError(ModelBuildError):
    """Parameters are well formed but the drift condition fails (lambda >= 1)."""


# ---------------------------------------------------------------------------
# dam / inventory model


def _make_law(family: str, params, a: float) -> Law:
    """Law whose parameters may depend on the action: ``base + slope * a``."""
    p = [float(x) for x in params]
    if family == "constant":
        return Constant(p[0] + (p[1] if len(p) > 1 else 0.0) * a)
    if family == "uniform":  # (lo, hi_base, hi_slope)
        return Uniform(p[0], p[1] + (p[2] if len(p) > 2 else 0.0) * a)
    if family == "normal":  # (mu_base, mu_slope, sd)
        return Normal(p[0] + p[1] * a, p[2])
    if family == "laplace":  # (loc_base, loc_slope, scale)
        return Laplace(p[0] + p[1] * a, p[2])
    raise ValueError(f"unknown distribution family {family!r}")


@dataclass
class DamModelParams:
    kappa: float = 0.5
    actions: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    inflow_family: str = "uniform"
    inflow_params: tuple = (0.0, 0.5, 0.1)
    outflow_family: str = "uniform"
    outflow_params: tuple = (0.5, 1.5)
    c_hat: float = 2.0
    cost: str = "min_linear_exp"
    grid_lo: float = 0.0
    grid_hi: float = 12.0
    cells: int = 240
    boundary_mode: str = "truncate_renormalize"
    variant: str = "bounded_inflow"

    def __post_init__(self):
        if self.kappa <= 0:
            raise ModelBuildError("kappa must be positive")
        if len(self.actions) == 0 or min(self.actions) < 0:
            raise ModelBuildError("actions must be nonnegative")
        if self.variant not in ("bounded_inflow", "light_tail"):
            raise ModelBuildError(f"unknown dam variant {self.variant!r}")

    def inflow(self, a: float) -> Law:
        return _make_law(self.inflow_family, self.inflow_params, a)

    def outflow(self, a: float) -> Law:
        return _make_law(self.outflow_family, self.outflow_params, a)

    def z_law(self, a: float) -> Law:
        return difference(self.inflow(a), self.outflow(a))


def dam_cost(params: DamModelParams, x, a):
    x = np.asarray(x, dtype=float)
    if params.cost == "min_linear_exp":
        return np.minimum(x + a, params.c_hat * np.exp(params.kappa * x))
    if params.cost == "linear":
        return x + a
    raise ValueError(f"unknown cost expression {params.cost!r}")


def _check_variant(p: DamModelParams):
    for a in p.actions:
        eta, xi = p.inflow(a), p.outflow(a)
        if p.variant == "bounded_inflow":
            lo, hi = eta.support
            if lo < 0 or not math.isfinite(hi) or xi.support[0] < 0:
                raise ModelBuildError("bounded_inflow variant needs inflow in [0, l] and nonnegative outflow")
        else:
            for law in (eta, xi):
                if isinstance(law, Laplace) and 1.0 / law.scale <= 2 * p.kappa:
                    raise ModelBuildError(f"light_tail variant needs tail rate 1/scale > 2 kappa, got {1 / law.scale}")
                if isinstance(law, Uniform) or isinstance(law, Constant):
                    continue


def build_dam_model(params: DamModelParams | None = None, lam_check: bool = True) -> MdpModel:
    """``x' = [x + eta - xi]^+`` on a truncated grid with weight ``exp(kappa x)``.

    The ``[.]^+`` atom at 0 is kept as a point mass.  The drift constant
    ``sup E exp(kappa Z)`` is integrated numerically and the build is rejected
    if it is not below 1; the grid-level constants are then fitted on the
    discretized kernel.
    """
    p = params or DamModelParams()
    _check_variant(p)
    grid = StateGrid.uniform(p.grid_lo, p.grid_hi, p.cells, p.boundary_mode)
    acts = ActionStructure.full(p.actions, len(grid))
    z = {a: p.z_law(a) for a in p.actions}
    for a, law in z.items():
        if law.mean() >= 0:
            raise DriftConditionError(f"Z(x, a={a}) must have negative mean, got {law.mean():.4g}")

    entry, lam = av.check_drift_exponential({("*", a): law for a, law in z.items()}, p.kappa)
    if lam_check and not entry.passed:
        raise DriftConditionError(f"drift constant sup E exp(kappa Z) = {lam:.6g} is not below 1 "
                              f"(worst action {entry.location}); choose smaller kappa or more stable actions")

    def density(x, a, ys):
        ys = np.asarray(ys, dtype=float)
        return np.where(ys > 0, z[a].pdf(ys - x), 0.0)

    def atoms(x, a):
        return [(0.0, float(z[a].cdf(np.array([-x]))[0]))]

    def tail_mass(x, a):
        return 0.0, float(1.0 - z[a].cdf(np.array([p.grid_hi - x]))[0])

    kernel = discretize_density_kernel(density, atoms, grid, acts, tail_mass if p.boundary_mode == "absorb_edge" else None)
    costs = np.column_stack([dam_cost(p, grid.centers, a) for a in p.actions])
    w = np.exp(p.kappa * grid.centers)
    if np.any(np.abs(costs) > p.c_hat * w[:, None] * (1 + 1e-12)):
        raise ModelBuildError("cost exceeds c_hat * exp(kappa x) on the grid")
    model = MdpModel(grid, acts, kernel, CostTable(costs, "UC"), WeightVector(w), None, name="dam",
                     source=KernelSource(density, atoms, tail_mass,
                                         max(law.density_bound for law in z.values())))
    fit_entry, uc = av.check_uc_model(model)
    if uc is None:
        raise DriftConditionError(f"no drift constants with lambda < 1 fit the discretized kernel: {fit_entry.message}")
    model.uc = uc
    model.meta.update(params=dataclasses.asdict(p), drift_lambda=lam, uc_fit=fit_entry.constants,
                      example_b=1.0, z_laws=z)
    return model


# ---------------------------------------------------------------------------
# LQ-type model


@dataclass
class LqModelParams:
    delta: float = 0.25
    radius: float = 5.0
    beta_breaks: tuple = (2.0,)
    beta_levels: tuple = (1.0, 2.0)
    noise_sd: float = 0.3
    noise_cut: float = 3.0
    cell_width: float | None = None  # default delta / 2
    action_radius: float | None = None  # default radius

    def __post_init__(self):
        if self.delta <= 0:
            raise ModelBuildError("delta must be positive")
        if len(self.beta_levels) != len(self.beta_breaks) + 1:
            raise ModelBuildError("beta needs one more level than breakpoints")
        if list(self.beta_breaks) != sorted(self.beta_breaks):
            raise ModelBuildError("beta breakpoints must be increasing")
        if self.beta_levels[-1] <= 0:
            raise ModelBuildError("beta must stay positive beyond the last breakpoint")
        if not all(math.isfinite(b) and b >= 0 for b in self.beta_levels):
            raise ModelBuildError("beta levels must be finite and nonnegative")

    def beta(self, x):
        """Piecewise-constant level in ``|x|``."""
        return np.asarray(self.beta_levels, dtype=float)[np.searchsorted(self.beta_breaks, np.abs(x), side="right")]

    @property
    def sup_beta(self) -> float:
        return float(max(self.beta_levels))

    @property
    def reference_bound(self) -> float:
        """``2 (delta^2 + sigma^2) sup beta``."""
        return 2.0 * (self.delta**2 + self.noise_sd**2) * self.sup_beta


def build_lq_model(params: LqModelParams | None = None) -> MdpModel:
    """``x' = x + a + zeta`` with cost ``beta(x)(x^2 + a^2)`` and actions on the lattice ``k delta``."""
    p = params or LqModelParams()
    h = p.cell_width or p.delta / 2
    n_half = int(round(p.radius / h))
    centers = h * np.arange(-n_half, n_half + 1)
    grid = StateGrid(centers, np.full(len(centers), h), "absorb_edge")
    ar = p.radius if p.action_radius is None else p.action_radius
    k = int(math.floor(ar / p.delta + 1e-9))
    actions = p.delta * np.arange(-k, k + 1)
    acts = ActionStructure.full(actions, len(grid))
    noise = TruncatedNormal(p.noise_sd, p.noise_cut)

    def density(x, a, ys):
        return noise.pdf(np.asarray(ys, dtype=float) - x - a)

    def tail_mass(x, a):
        return float(noise.cdf(grid.lo - x - a)), float(1.0 - noise.cdf(grid.hi - x - a))

    kernel = discretize_density_kernel(density, None, grid, acts, tail_mass)
    costs = p.beta(centers)[:, None] * (centers[:, None] ** 2 + actions[None, :] ** 2)
    model = MdpModel(grid, acts, kernel, CostTable(costs, "PC"), WeightVector(np.ones(len(grid))), None,
                     name="lq", source=KernelSource(density, None, tail_mass, noise.density_bound))
    n_max = int(math.floor(p.radius)) - 1
    K_n = [np.flatnonzero(np.abs(centers) <= n + 1e-12) for n in range(1, n_max + 1)]
    # lattice points with |a| <= n, so states and actions escape at the same rate
    A_n = [np.flatnonzero(np.abs(actions) <= n + 1e-12) for n in range(1, n_max + 1)]
    O_n = [np.flatnonzero(np.abs(centers) < n + 1) for n in range(1, n_max + 1)]
    model.meta.update(params=dataclasses.asdict(p), K_n=K_n, A_n=A_n, O_n=O_n, density_bound=noise.density_bound,
                      reference_bound=p.reference_bound, noise_variance=noise.variance())
    return model


def lq_reference_action(x: float, delta: float, actions=None) -> float:
    """``argmin_{a = k delta, |a| <= |x|} |x + a|`` (smallest |a| on ties)."""
    kmax = int(math.floor(abs(x) / delta + 1e-9))
    cands = delta * np.arange(-kmax, kmax + 1)
    if actions is not None:
        acts = np.asarray(actions)
        cands = np.array([c for c in cands if np.any(np.isclose(acts, c, atol=1e-12))])
    score = np.abs(x + cands)
    best = score.min()
    ties = cands[np.abs(score - best) <= 1e-12]
    return float(ties[np.argmin(np.abs(ties))])


def lq_reference_policy(params: LqModelParams | None = None, model: MdpModel | None = None) -> DeterministicPolicy:
    p = params or LqModelParams()
    model = model or build_lq_model(p)
    acts = model.actions.values
    choice = []
    for x in model.grid.centers:
        a = lq_reference_action(x, p.delta, acts)
        choice.append(int(np.argmin(np.abs(acts - a))))
    return DeterministicPolicy(np.array(choice))


# ---------------------------------------------------------------------------
# tiny oracle models


def _finite_model(name: str, P, c, admissible=None, **meta) -> MdpModel:
    P = np.asarray(P, dtype=float)
    c = np.asarray(c, dtype=float)
    S, A = c.shape
    adm = np.ones((S, A), dtype=bool) if admissible is None else np.asarray(admissible, dtype=bool)
    grid = StateGrid(np.arange(S, dtype=float), np.ones(S))
    model = MdpModel(grid, ActionStructure(np.arange(A, dtype=float), adm), DiscreteKernel(P),
                     CostTable(np.where(adm, c, 0.0), "PC"), WeightVector(np.ones(S)), None, name=name)
    model.meta.update(finite_oracle=True, **meta)
    return model


def single_state(cost: float = 3.0) -> MdpModel:
    return _finite_model("single_state", [[[1.0]]], [[cost]], g_star=cost, acoi_expected=True,
                         v_alpha="c / (1 - alpha)")


def two_cycle(c0: float = 1.0, c1: float = 3.0) -> MdpModel:
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    return _finite_model("two_cycle", P, [[c0], [c1]], g_star=(c0 + c1) / 2, acoi_expected=True,
                         v_alpha="((c0 + alpha c1), (c1 + alpha c0)) / (1 - alpha^2)", stationary=(0.5, 0.5))


def stay_cheap() -> MdpModel:
    """State 0: stay (cost 2) or move to 1 (cost 2); state 1 absorbing with cost 1."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 1] = 1.0
    P[1, :, 1] = 1.0
    adm = np.array([[True, True], [True, False]])
    return _finite_model("stay_cheap", P, [[2.0, 2.0], [1.0, 1.0]], adm, g_star=1.0, acoi_expected=True,
                         h=(1.0, 0.0))


def bellman_toy() -> MdpModel:
    """State 0: action a (cost 1, to state 1) or b (cost 2, stay); state 1 absorbing with cost 0."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = 1.0
    P[0, 1, 0] = 1.0
    P[1, :, 1] = 1.0
    adm = np.array([[True, True], [True, False]])
    return _finite_model("bellman_toy", P, [[1.0, 2.0], [0.0, 0.0]], adm, g_star=0.0, acoi_expected=True)


def disconnected_pair() -> MdpModel:
    """Two absorbing states with costs 0 and 3: relative values diverge (negative control)."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    return _finite_model("disconnected_pair", P, [[0.0], [3.0]], g_star=(0.0, 3.0), acoi_expected=False)


def swap_chain() -> MdpModel:
    """Swap (costs 1 and 0) or stay (costs 2 and 4); the optimal policy cycles, average cost 1/2."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    P[0, 1, 0] = P[1, 1, 1] = 1.0
    return _finite_model("swap_chain", P, [[1.0, 2.0], [0.0, 4.0]], g_star=0.5, acoi_expected=True)


def mixing_pair() -> MdpModel:
    """Irreducible chain with stationary law (0.4, 0.6) and costs (1, 2)."""
    P = np.array([[[0.7, 0.3]], [[0.2, 0.8]]])
    return _finite_model("mixing_pair", P, [[1.0], [2.0]], g_star=1.6, acoi_expected=True, stationary=(0.4, 0.6))


def zero_cost() -> MdpModel:
    P = np.array([[[0.5, 0.5]], [[0.5, 0.5]]])
    return _finite_model("zero_cost", P, [[0.0], [0.0]], g_star=0.0, acoi_expected=True)


MICRO_BUILDERS = {
    "single_state": single_state,
    "two_cycle": two_cycle,
    "stay_cheap": stay_cheap,
    "bellman_toy": bellman_toy,
    "disconnected_pair": disconnected_pair,
    "swap_chain": swap_chain,
    "mixing_pair": mixing_pair,
    "zero_cost": zero_cost,
}


def build_micro_oracles() -> list[MdpModel]:
    return [f() for f in MICRO_BUILDERS.values()]


# ---------------------------------------------------------------------------
# other families used by the checks


def build_gaussian_family(refine: int = 1, base_radius: float = 4.0, base_cells: int = 40,
                          base_actions: int = 9) -> MdpModel:
    """Next state ``N(a, 1)`` with actions spread over ``[-R, R]``; refinement widens R and the grid.

    With the actions unbounded in the limit, the sup of the densities
    approaches the constant ``1/sqrt(2 pi)`` on the whole line, so no finite
    measure can majorize the family.
    """
    R = base_radius * refine
    grid = StateGrid.uniform(-R - 4, R + 4, base_cells * refine * 2, "truncate_renormalize")
    actions = np.linspace(-R, R, (base_actions - 1) * refine * 2 + 1)
    acts = ActionStructure.full(actions, len(grid))
    law = Normal(0.0, 1.0)

    def density(x, a, ys):
        return law.pdf(np.asarray(ys, dtype=float) - a)

    kernel = discretize_density_kernel(density, None, grid, acts)
    costs = np.zeros((len(grid), len(actions)))
    return MdpModel(grid, acts, kernel, CostTable(costs, "PC"), WeightVector(np.ones(len(grid))), None,
                    name=f"gaussian_family_x{refine}", source=KernelSource(density, None, None, law.density_bound))


@dataclass
class GaussianFamilyParams:
    refine: int = 1
    base_radius: float = 4.0
    base_cells: int = 40
    base_actions: int = 9

    def __post_init__(self):
        if self.refine < 1 or self.base_cells < 1 or self.base_actions < 2 or self.base_radius <= 0:
            raise ModelBuildError("gaussian family needs refine >= 1, positive sizes and radius")


def build_shift_model(law: Law, lo: float, hi: float, cells: int, boundary_mode: str = "truncate_renormalize",
                      name: str = "shift") -> MdpModel:
    """``x' = x + Z`` with a single action and zero cost, for kernel-only checks."""
    grid = StateGrid.uniform(lo, hi, cells, boundary_mode)
    acts = ActionStructure.full([0.0], cells)

    def density(x, a, ys):
        return law.pdf(np.asarray(ys, dtype=float) - x)

    def tail_mass(x, a):
        return float(law.cdf(np.array([lo - x]))[0]), float(1 - law.cdf(np.array([hi - x]))[0])

    kernel = discretize_density_kernel(density, None, grid, acts, tail_mass if boundary_mode == "absorb_edge" else None)
    return MdpModel(grid, acts, kernel, CostTable(np.zeros((cells, 1)), "PC"), WeightVector(np.ones(cells)), None,
                    name=name, source=KernelSource(density, None, tail_mass))


# ---------------------------------------------------------------------------
# registry


def _dam_b() -> DamModelParams:
    return DamModelParams(inflow_family="normal", inflow_params=(0.3, 0.1, 0.1),
                          outflow_family="normal", outflow_params=(1.0, 0.0, 0.2), variant="light_tail")


PRESETS = {
    "dam_a_default": ("dam", DamModelParams),
    "dam_b_default": ("dam", _dam_b),
    "lq_default": ("lq", LqModelParams),
    "gaussian_mean_a": ("gaussian", GaussianFamilyParams),
    **{name: ("micro", name) for name in MICRO_BUILDERS},
}


def preset_params(name: str, overrides: dict | None = None):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    kind, factory = PRESETS[name]
    if kind == "micro":
        if overrides:
            raise ValueError("oracle presets take no overrides")
        return kind, None
    base = factory()
    if overrides:
        names = {f.name for f in dataclasses.fields(base)}
        unknown = set(overrides) - names
        if unknown:
            raise ValueError(f"unknown preset field(s): {sorted(unknown)}")
        ov = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
        base = dataclasses.replace(base, **ov)
    return kind, base


def build_preset(name: str, overrides: dict | None = None) -> MdpModel:
    kind, params = preset_params(name, overrides)
    if kind == "dam":
        model = build_dam_model(params)
    elif kind == "lq":
        model = build_lq_model(params)
    elif kind == "gaussian":
        model = build_gaussian_family(**dataclasses.asdict(params))
    else:
        model = MICRO_BUILDERS[name]()
    model.meta["preset"] = name
    return model
