"""Shared fixtures: one pretrained avatar per session."""

from dataclasses import dataclass

import numpy as np
import pytest

from metastyle.avatar import AvatarConfig, IdentityInput, init_params
from metastyle.avatar.faces import IDENTITIES, identity_maps
from metastyle.avatar.pretrain import default_dataset, pretrain_photoreal
from metastyle.harness.config import PretrainSettings
from metastyle.tensorcore import save_checkpoint


@dataclass
class Pretrained:
    cfg: AvatarConfig
    init: object
    params: object
    dataset: object
    history: list


@pytest.fixture(scope="session")
def avatar_cfg():
    return AvatarConfig()


@pytest.fixture(scope="session")
def id_in(avatar_cfg):
    return IdentityInput.from_arrays(*identity_maps(IDENTITIES[0], avatar_cfg.map_size))


@pytest.fixture(scope="session")
def pretrained(avatar_cfg):
    """Photoreal avatar trained with the default pretraining settings."""
    s = PretrainSettings()
    init = init_params(avatar_cfg)
    params = init.clone()
    data = default_dataset(avatar_cfg)
    hist = pretrain_photoreal(params, avatar_cfg, data, s.steps, s.lr, s.batch_size, s.seed)
    return Pretrained(avatar_cfg, init, params, data, hist)


@pytest.fixture(scope="session")
def pretrained_ckpt(pretrained, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "pretrained.ckpt"
    save_checkpoint(pretrained.params, path, {"pretrain_step": len(pretrained.history)})
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
