from importlib import resources

import numpy as np
import pytest

from rfedit.checkpoint import load_model
from rfedit.mmdit import MMDiT, ModelConfig


# (number, title, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")


def shipped_checkpoint_path():
    return str(resources.files("rfedit") / "data" / "toy.fxsp")


@pytest.fixture(scope="session")
def trained_model():
    model, _ = load_model(shipped_checkpoint_path())
    return model


@pytest.fixture(scope="session")
def random_model():
    """Default-config model with non-zero modulation maps, so every path is live."""
    model = MMDiT(ModelConfig(), seed=0)
    rng = np.random.Generator(np.random.PCG64(123))
    params = {}
    for k, p in model.params.items():
        arr = p.data.copy()
        if ".mod." in k:
            arr = (0.2 * rng.standard_normal(arr.shape)).astype(np.float32)
        params[k] = arr
    return MMDiT(model.config, params)


@pytest.fixture
def small_config():
    return ModelConfig(image_size=8, patch_size=2, hidden=16, heads=2, blocks=2, d_pool=8, d_ctxt=8)
