import numpy as np
import pytest

from homogcur.energy import make_density
from homogcur.geometry import Cube, build_lattice


@pytest.fixture(scope="session")
def unit1():
    return make_density({"kind": "unit", "m": 1})


@pytest.fixture(scope="session")
def unit2():
    return make_density({"kind": "unit", "m": 2})


@pytest.fixture(scope="session")
def checker3():
    return make_density({"kind": "checker", "a": 3, "m": 1})


@pytest.fixture(scope="session")
def grid10():
    """Axis cube of side 10 at unit spacing, r=1."""
    return build_lattice(Cube([1.0, 0.0], 10.0), 1.0, 1)


@pytest.fixture(scope="session")
def cube10():
    return Cube([1.0, 0.0], 10.0)


def make_path_chain(g, path, theta):
    """Chain along consecutive lattice coordinates with constant multiplicity."""
    from homogcur.chains import Chain

    theta = np.asarray(theta, dtype=np.int64)
    data = {}
    for a, b in zip(path[:-1], path[1:]):
        eid, sign = g.edge_id(g.node_id(a), g.node_id(b))
        data[eid] = data.get(eid, np.zeros(theta.size, dtype=np.int64)) + sign * theta
    return Chain(g, data, m=theta.size)


@pytest.fixture(scope="session")
def path_chain():
    return make_path_chain
