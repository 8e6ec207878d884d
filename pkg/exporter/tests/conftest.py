import pytest
import torch

from support import synthetic_state_dict


@pytest.fixture(scope="session")
def ckpt_1000(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "upstream_cls.pt"
    torch.save(synthetic_state_dict(nc=1000, seed=4), path)
    return path
