import numpy as np
import pytest

from acoilab.model import ActionStructure, CostTable, DiscreteKernel, MdpModel, StateGrid, WeightVector
from acoilab.presets import build_dam_model, build_lq_model, build_micro_oracles, MICRO_BUILDERS
from acoilab.vanishing import run_vanishing_discount


def finite_model(P, c, admissible=None, model_class="PC", weight=None, uc=None, name="toy"):
    """Small model on the integer grid 0..S-1."""
    P = np.asarray(P, dtype=float)
    c = np.asarray(c, dtype=float)
    S, A = c.shape
    grid = StateGrid(np.arange(S, dtype=float), np.ones(S))
    adm = np.ones((S, A), dtype=bool) if admissible is None else np.asarray(admissible, dtype=bool)
    w = None if weight is None else WeightVector(np.asarray(weight, dtype=float))
    return MdpModel(grid, ActionStructure(np.arange(A, dtype=float), adm), DiscreteKernel(P),
                    CostTable(c, model_class), w, uc, name=name)


@pytest.fixture(scope="session")
def dam():
    return build_dam_model()


@pytest.fixture(scope="session")
def lq():
    return build_lq_model()


@pytest.fixture(scope="session")
def micro():
    return {name: build() for name, build in MICRO_BUILDERS.items()}


@pytest.fixture(scope="session")
def dam_run(dam):
    return run_vanishing_discount(dam)


@pytest.fixture(scope="session")
def lq_run(lq):
    return run_vanishing_discount(lq)


@pytest.fixture(scope="session")
def micro_runs(micro):
    return {name: run_vanishing_discount(m) for name, m in micro.items()}
