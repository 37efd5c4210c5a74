"""Shared fixtures: a small synthetic benchmark and model reused across modules."""

import pytest

from graphprior.scenes import SceneConfig, make_benchmark
from graphprior.training import ModelSpec, init_model


@pytest.fixture(scope="session")
def tiny_cfg():
    return SceneConfig(num_classes=6, num_templates=2, classes_per_template=3,
                       objects_min=3, objects_max=5, feature_dim=8)


@pytest.fixture(scope="session")
def tiny_bench(tiny_cfg):
    return make_benchmark(tiny_cfg, num_train=12, num_test=6, seed=3)


@pytest.fixture(scope="session")
def tiny_spec(tiny_cfg):
    return ModelSpec(feature_dim=tiny_cfg.feature_dim,
                     num_classes=tiny_cfg.num_classes,
                     mp_layer_dims=(6,), ds_iters=30, ds_tol=1e-9,
                     energy_edge_dim=2, energy_pool_dim=4, energy_hidden_dim=4)


@pytest.fixture()
def tiny_model(tiny_spec):
    # function scope: training mutates parameters in place
    return init_model(tiny_spec, seed=0)
