"""
Flat, typed run configuration with dotted keys
"""
import copy
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from config import NAMESPACES
from .exceptions import ConfigError
from ..data_processing.synthetic import SyntheticCorpusSpec
from ..downstream.trainer import DownstreamSettings
from ..encoder.config import EncoderConfig
from ..pretraining.masking import MaskPolicy
from ..pretraining.trainer import OptimizerSettings, PretrainSettings
from ..probing.probe import ProbeConfig

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}

RESOLVED_FILENAME = "config.resolved"


def default_values() -> Dict[str, Any]:
    """Every known key (``namespace.name``) with its default."""
    return {
        f"{namespace}.{name}": copy.deepcopy(value)
        for namespace, values in NAMESPACES.items()
        for name, value in values.items()
    }


def _coerce(key: str, raw: Any, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}")
            return int(raw) if not isinstance(raw, str) else int(raw.strip())
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            if isinstance(raw, (list, tuple)):
                return [str(item).strip() for item in raw]
            return [item.strip() for item in str(raw).split(",") if item.strip()]
        return str(raw).strip()
    except ValueError as exc:
        raise ConfigError(f"Invalid value for {key}: {exc}") from None


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_config_text(text: str, source: str = "<config>") -> List[Tuple[str, str]]:
    """Read ``key = value`` lines; ``#`` starts a comment line."""
    pairs = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {stripped!r}")
        key, value = stripped.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


class RunConfig:
    """
    Every experiment setting under a dotted key such as ``encoder.num_layers``.

    Values start from the defaults in ``config.py``; a config file and then
    command-line overrides are applied on top. Unknown keys are rejected.
    """

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self._values = default_values()
        for key, value in (values or {}).items():
            self.set(key, value)

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Union[Mapping[str, Any], Iterable[Tuple[str, Any]], None] = None,
    ) -> "RunConfig":
        config = cls()
        if path:
            path = Path(path)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
            for key, value in parse_config_text(text, str(path)):
                config.set(key, value)
        items = overrides.items() if isinstance(overrides, Mapping) else (overrides or [])
        for key, value in items:
            config.set(key, value)
        return config

    def set(self, key: str, value: Any) -> None:
        if key not in self._values:
            raise ConfigError(f"Unknown configuration key: {key}")
        self._values[key] = _coerce(key, value, self._values[key])

    def get(self, key: str) -> Any:
        if key not in self._values:
            raise ConfigError(f"Unknown configuration key: {key}")
        return self._values[key]

    __getitem__ = get

    def namespace(self, name: str) -> Dict[str, Any]:
        prefix = f"{name}."
        return {k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)}

    def resolved(self) -> str:
        return "".join(f"{key} = {_render(self._values[key])}\n" for key in sorted(self._values))

    def write_resolved(self, directory: Union[str, Path]) -> Path:
        path = Path(directory) / RESOLVED_FILENAME
        path.write_text(self.resolved(), encoding="utf-8")
        return path

    # Typed views

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig.from_dict(self.namespace("encoder"))

    def mask_policy(self) -> MaskPolicy:
        return MaskPolicy(**self.namespace("mask"))

    def optimizer_settings(self) -> OptimizerSettings:
        return OptimizerSettings(**self.namespace("optimizer"))

    def pretrain_settings(self) -> PretrainSettings:
        values = self.namespace("pretrain")
        return PretrainSettings(seed=self.get("run.seed"), threads=self.get("run.threads"), **values)

    def synthetic_spec(self) -> SyntheticCorpusSpec:
        return SyntheticCorpusSpec(**self.namespace("synthetic"))

    def downstream_settings(self) -> DownstreamSettings:
        values = self.namespace("downstream")
        return DownstreamSettings(
            learning_rate=values["learning_rate"] or None,
            epochs=values["epochs"],
            batch_size=values["batch_size"],
            patience=values["patience"],
            weight_decay=values["weight_decay"],
            hidden_dim=values["hidden_dim"],
            label_fraction=values["label_fraction"],
            downsample_factor=self.get("mask.downsample_factor"),
            downsample_mode=self.get("mask.downsample_mode"),
            seed=self.get("run.seed"),
            threads=self.get("run.threads"),
        )

    def probe_config(self) -> ProbeConfig:
        values = self.namespace("probe")
        return ProbeConfig(
            hidden_dim=values["hidden_dim"],
            learning_rate=values["learning_rate"],
            epochs=values["epochs"],
            patience=values["patience"],
            batch_size=values["batch_size"],
            max_frames=values["max_frames"],
            seed=self.get("run.seed"),
            sampling_seed=values["sampling_seed"],
        )

    def probe_layers(self) -> Optional[List[int]]:
        text = self.get("probe.layers").strip()
        if not text:
            return None
        try:
            return [int(item) for item in text.split(",") if item.strip()]
        except ValueError:
            raise ConfigError(f"probe.layers must be comma-separated integers, got {text!r}") from None
