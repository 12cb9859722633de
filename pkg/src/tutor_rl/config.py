"""Run configuration.

One TOML (or JSON) file drives the pipeline.  Top-level keys set the
shared knobs (seed, problem, episode counts, gamma); optional [fqi],
[cql] and [bc] tables override algorithm defaults.  Sub-seeds are
derived from `master_seed` unless a table pins its own.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .core import DEFAULT_GAMMA, DEFAULT_MAX_TURNS, stable_seed
from .errors import ConfigError
from .offline_rl import CqlConfig, FqiConfig
from .policies import BcClassifierConfig
from .studentsim import REFERENCE_PROBLEM_ID

_TOP_LEVEL_KEYS = {
    "master_seed",
    "problem_id",
    "problems_path",
    "n_train_episodes",
    "max_turns",
    "gamma",
    "eval_episodes",
    "augment_top_k",
    "augment_rollouts",
    "fqi",
    "cql",
    "bc",
}


@dataclass(frozen=True)
class RunConfig:
    master_seed: int
    problem_id: str = REFERENCE_PROBLEM_ID
    problems_path: Optional[str] = None  # None = packaged problem set
    n_train_episodes: int = 3000
    max_turns: int = DEFAULT_MAX_TURNS
    gamma: float = DEFAULT_GAMMA
    eval_episodes: int = 300
    augment_top_k: int = 500
    augment_rollouts: int = 5
    fqi: FqiConfig = FqiConfig()
    cql: CqlConfig = CqlConfig()
    bc: BcClassifierConfig = BcClassifierConfig()

    def __post_init__(self):
        if isinstance(self.master_seed, bool) or not isinstance(self.master_seed, int):
            raise ConfigError("master_seed must be an integer")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")
        if self.n_train_episodes < 1:
            raise ConfigError("n_train_episodes must be positive")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be positive")
        if self.max_turns < 1:
            raise ConfigError("max_turns must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.augment_top_k < 1 or self.augment_rollouts < 1:
            raise ConfigError("augmentation sizes must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fqi"]["seed"] = self.fqi.seed
        d["cql"]["hidden"] = list(self.cql.hidden)
        d["bc"]["hidden"] = list(self.bc.hidden)
        return d


def _build_section(cls, section: dict, where: str, derived: dict):
    """Construct an algorithm config, applying derived defaults for keys
    the file left out."""
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {sorted(unknown)}")
    merged = dict(derived)
    merged.update(section)
    if "hidden" in merged:
        merged["hidden"] = tuple(merged["hidden"])
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad [{where}] section: {exc}") from exc


def run_config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    if "master_seed" not in raw:
        raise ConfigError("config must set master_seed")
    master_seed = raw["master_seed"]
    if isinstance(master_seed, bool) or not isinstance(master_seed, int):
        raise ConfigError("master_seed must be an integer")
    gamma = raw.get("gamma", DEFAULT_GAMMA)

    fqi = _build_section(
        FqiConfig,
        raw.get("fqi", {}),
        "fqi",
        {"gamma": gamma, "seed": stable_seed(master_seed, "fqi")},
    )
    cql = _build_section(
        CqlConfig,
        raw.get("cql", {}),
        "cql",
        {"gamma": gamma, "seed": stable_seed(master_seed, "cql")},
    )
    bc = _build_section(
        BcClassifierConfig,
        raw.get("bc", {}),
        "bc",
        {"seed": stable_seed(master_seed, "bc")},
    )
    simple = {
        k: v
        for k, v in raw.items()
        if k not in ("fqi", "cql", "bc")
    }
    return RunConfig(**simple, fqi=fqi, cql=cql, bc=bc)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    data = path.read_bytes()
    if path.suffix == ".json":
        try:
            raw = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    else:
        try:
            raw = tomllib.loads(data.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return run_config_from_dict(raw)


def default_run_config_text() -> str:
    """The packaged template config, as TOML text."""
    from importlib import resources

    return (
        resources.files("tutor_rl")
        .joinpath("data/default_config.toml")
        .read_text(encoding="utf-8")
    )
