import pytest

from driverwatch import graph as G


@pytest.fixture(scope="session")
def mini_model():
    return G.build_model("mini-cls", 10)


@pytest.fixture(scope="session")
def mini_bound(mini_model):
    return mini_model.bind(G.random_weight_store(mini_model, seed=7))


@pytest.fixture(scope="session")
def full_model():
    return G.build_yolov8_cls(G.ModelConfig(num_classes=10))


@pytest.fixture(scope="session")
def full_bound(full_model):
    return full_model.bind(G.random_weight_store(full_model, seed=3))
