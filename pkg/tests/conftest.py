"""Shared fixtures: the reference two-component system and probe helpers."""

from pathlib import Path

import numpy as np
import pytest

from cfgctrl.config import load_config, build_system
from cfgctrl.numerics import Rng

REPO_ROOT = Path(__file__).resolve().parents[1]
REFERENCE_CONFIG = REPO_ROOT / "configs" / "reference.json"


@pytest.fixture(scope="session")
def reference_config():
    return load_config(str(REFERENCE_CONFIG))


@pytest.fixture(scope="session")
def reference_system(reference_config):
    return build_system(reference_config.system)


def draw_probe(rng: Rng, system, cond: str | None, max_radius: float = 2.0):
    """Random (x, tau) with bounded Mahalanobis radius from a component path mean.

    Keeps probes inside the conditional path mass so kernel estimators retain
    a usable effective sample size.
    """
    tau = float(0.05 + 0.90 * rng.uniform())
    idx = system.component_indices(cond)
    k = int(idx[int(rng.uniform() * len(idx)) % len(idx)])
    mu = system.component(k).mean
    scale = np.sqrt(tau**2 + (1.0 - tau) ** 2)
    u = rng.standard_normal(system.dim)
    u /= np.linalg.norm(u)
    r = max_radius * float(rng.uniform())
    return tau * mu + scale * r * u, tau
