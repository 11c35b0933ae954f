import sys
from pathlib import Path

import numpy as np
import pytest


ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))


@pytest.fixture(autouse=True)
def fresh_settings(tmp_path, monkeypatch):
    """Each test sees settings rebuilt from its own environment."""
    import app.config as config

    monkeypatch.setenv("GENSMOOTH_OUTPUT_ROOT", str(tmp_path / "runs"))
    config.get_settings.cache_clear()
    yield
    config.get_settings.cache_clear()


def central_jacobian(fn, theta, h=1e-6):
    """|θ| × m central-difference Jacobian of fn: θ -> R^m."""
    theta = np.asarray(theta, dtype=np.float64)
    columns = []
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        columns.append((np.asarray(fn(theta + step)) - np.asarray(fn(theta - step))) / (2 * h))
    return np.array(columns)


def write_config(path: Path, **values) -> Path:
    """Flat config file from keyword args; '__' stands for '.' in keys."""
    lines = [f"{key.replace('__', '.')} = {value}" for key, value in values.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


TINY_RUN = {
    "data__classes": 3,
    "data__per_class": 20,
    "data__dim": 4,
    "diagnostics__batch_size": 4,
    "diagnostics__stride": 10,
    "diagnostics__pearson_window": 5,
    "diagnostics__pearson_after_step": 0,
    "optimizer__steps": 100,
    "optimizer__batch_size": 8,
    "optimizer__lr": 0.05,
    "model__block_count": 0,
    "loss__kind": "mse",
}
