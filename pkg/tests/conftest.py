import numpy as np
import pytest

from nvvc.scene import default_scene, hemisphere_rig, make_dataset
from nvvc.training import TrainConfig


def tiny_config(**kw) -> TrainConfig:
    base = dict(
        lambda1=0.0001, lambda2=0.0001, gof_length=20,
        iters_iframe=40, iters_pframe=25,
        rays_per_batch=256, n_samples=16,
        coef_size=12, coef_channels=4,
        basis_sizes=(6, 8), basis_channels=2, basis_freqs=(1, 2),
        mlp_hidden=(16, 16), dir_octaves=1, seed=7,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    scene = default_scene(n_frames=3)
    cams = hemisphere_rig(3, 24, 24)
    return make_dataset(scene, cams, tmp_path_factory.mktemp("tinyds"), n_test_views=1)


@pytest.fixture(scope="session")
def static_dataset(tmp_path_factory):
    scene = default_scene(n_frames=2, static=True)
    cams = hemisphere_rig(3, 24, 24)
    return make_dataset(scene, cams, tmp_path_factory.mktemp("staticds"), n_test_views=1)


@pytest.fixture(scope="session")
def seq_dataset(tmp_path_factory):
    scene = default_scene(n_frames=21)
    cams = hemisphere_rig(2, 20, 20)
    return make_dataset(scene, cams, tmp_path_factory.mktemp("seqds"), n_test_views=1)
