"""Load packaged scenario/config/demo fixtures or external files."""

from __future__ import annotations

import importlib.resources
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError, UnknownScenario
from .world import ScenarioConfig


def _data_root():
    return importlib.resources.files("btlearn") / "scenarios"


def _load_yaml(path: Path) -> dict[str, Any]:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


def list_scenarios() -> list[str]:
    root = _data_root()
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_scenario(ref: str | Path) -> ScenarioConfig:
    """Accepts a packaged scenario name ('exp1') or a path to a YAML file."""
    p = Path(ref)
    if p.suffix in (".yaml", ".yml") and p.exists():
        return ScenarioConfig.from_dict(_load_yaml(p))
    packaged = _data_root() / f"{ref}.yaml"
    if packaged.is_file():
        with packaged.open() as fh:
            data = yaml.safe_load(fh)
        return ScenarioConfig.from_dict(data)
    raise UnknownScenario(str(ref))


def packaged_path(kind: str, name: str) -> Path:
    """Path to a packaged fixture: kind is 'configs' or 'demos'."""
    p = _data_root() / kind / name
    if not p.is_file():
        raise ConfigError(f"no packaged {kind} fixture named {name}")
    return Path(str(p))
