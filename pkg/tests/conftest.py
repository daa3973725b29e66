from __future__ import annotations

import numpy as np
import pytest

from statsynth.reference import EcommerceParams, generate
from statsynth.schema import Continuous, Dataset, Discrete, Variable, VariableSchema


@pytest.fixture(scope="session")
def ref_2k() -> Dataset:
    return generate(EcommerceParams(), 2000, seed=11)


@pytest.fixture(scope="session")
def ref_100k() -> Dataset:
    return generate(EcommerceParams(), 100_000, seed=123)


@pytest.fixture()
def tiny_schema() -> VariableSchema:
    return VariableSchema((
        Variable("color", Discrete(("red", "green", "blue"))),
        Variable("size", Continuous(0.0, 10.0)),
    ))


@pytest.fixture()
def two_binary_schema() -> VariableSchema:
    return VariableSchema((
        Variable("a", Discrete(("A0", "A1"))),
        Variable("b", Discrete(("B0", "B1"))),
    ))


def make_dataset(schema: VariableSchema, rows) -> Dataset:
    return Dataset.from_records(schema, rows)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)
