import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def random_spd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    B = rng.normal(size=(n, n))
    return scale * (B @ B.T + n * np.eye(n))


@pytest.fixture
def rng():
    return rng_for(20260816)


def make_scalar_instance(a=0.0, q=0.0, h=1.0, r=1.0, p0=1.0, T=1.0,
                         budget=10.0, w_T=1.0):
    """1-state, 1-sensor instance used by most closed-form checks."""
    from infosched.model import (
        Instance, ResourcePolytope, Sensor, SystemModel, WeightSpec,
    )

    system = SystemModel(n=1, A=np.array([[a]]), Q=np.array([[q]]),
                         m0=np.zeros(1), P0=np.array([[p0]]), T=T)
    sensor = Sensor(H=np.array([[h]]), R=np.array([[r]]))
    polytope = ResourcePolytope(C=np.ones((1, 1)), b=np.array([budget]))
    weights = WeightSpec(W_stages=None, W_T=np.array([[w_T]]))
    return Instance(system=system, sensors=(sensor,), polytope=polytope,
                    weights=weights)
