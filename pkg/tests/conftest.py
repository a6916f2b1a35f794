from pathlib import Path
from typing import Any, Callable

import pytest

from fairfed.config import ExperimentConfig, config_dict
from fairfed.harness import demo_config

ConfigFactory = Callable[..., ExperimentConfig]


def tiny_config(out: Path, **overrides: Any) -> ExperimentConfig:
    """Demo case 1 shrunk to run in about a second, with pinned lambda and gamma."""
    raw = config_dict(demo_config(1, seed=1))
    raw["data"]["synthetic"].update(n=800, d=3)
    raw["federation"]["rounds"] = 2
    raw["federation"]["train"]["batch_size"] = 64
    raw["tuning"].update(
        coarse_points=2, refined_points=2, sweep={"step": 0.5, "max_lambda": 1.0}
    )
    raw.update(pinned_lambda=1.0, pinned_gamma=0.01, output_dir=str(out))
    raw.update(overrides)
    return ExperimentConfig.model_validate(raw)


@pytest.fixture
def make_config(tmp_path: Path) -> ConfigFactory:
    """Factory for tiny experiment configs writing under ``tmp_path``."""

    def factory(**overrides: Any) -> ExperimentConfig:
        return tiny_config(tmp_path / "out", **overrides)

    return factory
