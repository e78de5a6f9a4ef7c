import math

import numpy as np
import pytest

from scatdeg.potential import (
    GaussianBump,
    PolyBump,
    PotentialModel,
    SingularPower,
    virial_radius,
)


@pytest.fixture(scope="session")
def free2():
    return PotentialModel(2, ())


@pytest.fixture(scope="session")
def kepler2():
    return PotentialModel(2, (SingularPower(Z=1.0, alpha=1.0, center=(0.0, 0.0)),))


@pytest.fixture(scope="session")
def bump2():
    return PotentialModel(2, (GaussianBump(A=2.0, sigma=1.0, center=(0.0, 0.0)),))


@pytest.fixture(scope="session")
def poly2():
    return PotentialModel(2, (PolyBump(A=2.0, rho=2.0, center=(0.0, 0.0)),))


@pytest.fixture(scope="session")
def m43():
    return PotentialModel(2, (SingularPower(Z=1.0, alpha=4.0 / 3.0, center=(0.0, 0.0)),))


@pytest.fixture(scope="session")
def two_bump():
    return PotentialModel(2, (GaussianBump(A=2.0, sigma=1.0, center=(-3.0, 0.0)),
                              GaussianBump(A=2.0, sigma=1.0, center=(3.0, 0.0))))


@pytest.fixture(scope="session")
def kepler3():
    return PotentialModel(3, (SingularPower(Z=1.0, alpha=1.0, center=(0.0, 0.0, 0.0)),))


@pytest.fixture(scope="session")
def bump3():
    return PotentialModel(3, (GaussianBump(A=2.0, sigma=1.0, center=(0.0, 0.0, 0.0)),))


@pytest.fixture(scope="session")
def triangle():
    side = 12.0
    h = side * math.sqrt(3.0) / 2.0
    centers = ((-side / 2.0, 0.0), (side / 2.0, 0.0), (0.0, h))
    model = PotentialModel(2, tuple(
        GaussianBump(A=2.0, sigma=1.0, center=c) for c in centers))
    return model, centers


@pytest.fixture(scope="session")
def kepler2_virial():
    model = PotentialModel(2, (SingularPower(Z=1.0, alpha=1.0, center=(0.0, 0.0)),))
    return {E: virial_radius(model, E) for E in (0.5, 1.0, 2.0)}


def kepler_deflection(E: float, b: float, Z: float = 1.0) -> float:
    """Closed-form hyperbola deflection angle, tan(chi/2) = Z/(2 E b)."""
    return 2.0 * math.atan(Z / (2.0 * E * b))


def kepler_pericentral_radius(E: float, l: float, Z: float = 1.0) -> float:
    """Closed-form pericentral radius of the Kepler hyperbola."""
    return (-Z + math.sqrt(Z * Z + 2.0 * E * l * l)) / (2.0 * E)


@pytest.fixture(scope="session")
def oracles():
    return {"kepler_deflection": kepler_deflection,
            "kepler_r_min": kepler_pericentral_radius}
