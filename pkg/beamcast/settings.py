# beamcast/settings.py

import json
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError
from .log import get_logger

logger = get_logger(__name__)

# config/ lives next to the package, as in the original layout.
CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
DEFAULT_CONFIG_PATH = CONFIG_DIR / "default_config.json"
SETTINGS_PATH = CONFIG_DIR / "config.yaml"

CONFIG_KEYS = ("n", "nu", "epsilon", "gamma", "c1", "c2", "seed")


def describe_validation_error(exc: ValidationError) -> str:
    """Flattens a pydantic error into ``key: message`` pairs."""
    parts = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
        parts.append(f"{key}: {err.get('msg', 'invalid value')}")
    return "; ".join(parts)


class SimulationConfig(BaseModel):
    """Network and scheme parameters.

    Wavelength and the link constant G/(N0 W) are fixed to 1 by the unit
    choice and are deliberately not fields.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(1024, ge=1)
    nu: float = Field(1.0, gt=0, allow_inf_nan=False)
    epsilon: float = Field(0.1, gt=0, allow_inf_nan=False)
    gamma: float = Field(1.0, ge=0, allow_inf_nan=False)
    c1: float = Field(2.0, gt=0, allow_inf_nan=False)
    c2: float = Field(1.0, gt=0, allow_inf_nan=False)
    seed: int = Field(0, ge=0, lt=2**64)

    @property
    def area(self) -> float:
        return float(self.n) ** self.nu

    @property
    def side(self) -> float:
        return float(self.n) ** (self.nu / 2)

    @property
    def power(self) -> float:
        """Per-node power P = n^(nu - 1 - gamma)."""
        return float(self.n) ** (self.nu - 1 - self.gamma)

    @property
    def snr_s(self) -> float:
        return float(self.n) ** (-self.gamma)

    @property
    def density(self) -> float:
        """Nodes per unit area, n^(1 - nu)."""
        return float(self.n) ** (1 - self.nu)

    @property
    def cluster_length(self) -> float:
        """Horizontal cluster extent; also the edge gap d inside a pair."""
        return self.side / 4

    @property
    def pair_gap(self) -> float:
        return self.cluster_length

    @property
    def cluster_height(self) -> float:
        return float(self.n) ** (self.nu / 4) / (2 * self.c1)

    @property
    def vertical_gap(self) -> float:
        return self.c2 * float(self.n) ** (self.nu / 4 + self.epsilon)

    @property
    def cluster_area(self) -> float:
        return self.cluster_height * self.cluster_length

    @property
    def expected_cluster_count(self) -> float:
        return self.cluster_area * self.density

    @property
    def gain_base(self) -> float:
        """Nominal coherent gain M n^(1-nu) / d of one cluster."""
        return self.expected_cluster_count / self.pair_gap

    def with_updates(self, **changes: Any) -> "SimulationConfig":
        data = self.model_dump()
        data.update({k: v for k, v in changes.items() if v is not None})
        try:
            return SimulationConfig(**data)
        except ValidationError as e:
            raise ConfigError(describe_validation_error(e)) from e


class NumericsSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    power_tolerance: float = Field(1e-8, gt=0)
    power_max_iterations: int = Field(10_000, ge=1)
    exact_threshold: int = Field(64, ge=1)


class SchemeSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_rounds: int = Field(64, ge=1)
    noise_constant: float = Field(2.0, gt=0)
    epsilon1: float = Field(0.05, gt=0)


class RuntimeSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    threads: int = Field(1, ge=1)
    out_dir: str = "results"


class ToolSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    numerics: NumericsSettings = NumericsSettings()
    scheme: SchemeSettings = SchemeSettings()
    runtime: RuntimeSettings = RuntimeSettings()


def load_settings(path: Optional[Union[str, Path]] = None) -> ToolSettings:
    """Reads tool settings from YAML, then applies environment overrides.

    ``.env`` in the working directory is honoured through python-dotenv.
    Recognised variables: BEAMCAST_SETTINGS, BEAMCAST_THREADS, BEAMCAST_OUT.
    """
    load_dotenv()
    settings_path = Path(path or os.getenv("BEAMCAST_SETTINGS") or SETTINGS_PATH)

    raw: Dict[str, Any] = {}
    if settings_path.exists():
        try:
            with open(settings_path, "r", encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed settings file {settings_path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"settings file {settings_path} must hold a mapping")
        logger.debug("🔄 Tool settings read from %s", settings_path)
    elif path is not None:
        raise ConfigError(f"settings file not found: {settings_path}")

    runtime = dict(raw.get("runtime") or {})
    if os.getenv("BEAMCAST_THREADS"):
        runtime["threads"] = os.getenv("BEAMCAST_THREADS")
    if os.getenv("BEAMCAST_OUT"):
        runtime["out_dir"] = os.getenv("BEAMCAST_OUT")
    raw["runtime"] = runtime

    try:
        return ToolSettings(**raw)
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e)) from e


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> SimulationConfig:
    """Builds a SimulationConfig from a JSON document plus flag overrides.

    Args:
        path: JSON file holding exactly the keys n, nu, epsilon, gamma, c1, c2
            and seed. When omitted, ``config/default_config.json`` is used if
            present, otherwise the model defaults.
        overrides: Values that win over the document. ``None`` entries are
            ignored so unset CLI flags fall through.

    Returns:
        SimulationConfig: the validated configuration.

    Raises:
        ConfigError: missing or malformed file, unknown or missing keys, or a
            value out of range. The message names the offending key.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        source = Path(path)
        if not source.exists():
            raise ConfigError(f"config file not found: {source}")
        data = _read_config_document(source, strict=True)
    elif DEFAULT_CONFIG_PATH.exists():
        data = _read_config_document(DEFAULT_CONFIG_PATH, strict=False)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{key}: not a configuration key")
        data[key] = value

    try:
        return SimulationConfig(**data)
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e)) from e


def _read_config_document(source: Path, strict: bool) -> Dict[str, Any]:
    try:
        with open(source, "r", encoding="utf-8") as f:
            content = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config JSON in {source}: {e}") from e
    if not isinstance(content, dict):
        raise ConfigError(f"config document {source} must be a JSON object")

    unknown = sorted(set(content) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: not a configuration key")
    if strict:
        missing = [k for k in CONFIG_KEYS if k not in content]
        if missing:
            raise ConfigError(f"{missing[0]}: missing from {source}")
    return content
