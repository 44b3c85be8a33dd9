"""Shared fixtures: published power model, default scenario, fixed seeds."""
import numpy as np
import pytest

from darb.models.schemas import PowerModel, Seed, SystemConfig


@pytest.fixture
def power_model() -> PowerModel:
    return PowerModel()


@pytest.fixture
def zero_power() -> PowerModel:
    return PowerModel(p_fpga=0, p_pin=0, p_a=0, p_u=0, p_sr=0, p_sa=0, p_uk=0)


@pytest.fixture
def system() -> SystemConfig:
    return SystemConfig()


@pytest.fixture
def seed() -> Seed:
    return Seed(20240601)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
