"""
Encoder architecture hyperparameters
"""
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict

from ..utils.constants import DEFAULT_TARGET_DIM, INPUT_DIM
from ..utils.exceptions import ConfigError


@dataclass(frozen=True)
class EncoderConfig:
    """
    Transformer encoder shape.

    ``share_weights=True`` builds the shared-block model;
    ``False`` builds one independent block per layer.
    """

    num_layers: int = 12
    hidden_dim: int = 768
    num_heads: int = 12
    ff_dim: int = 3072
    input_dim: int = INPUT_DIM
    target_dim: int = DEFAULT_TARGET_DIM
    share_weights: bool = True
    dropout_rate: float = 0.1
    max_sequence_length: int = 3000

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "ff_dim",
                     "input_dim", "target_dim", "max_sequence_length"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"encoder.{name} must be a positive integer, got {value!r}")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"encoder.hidden_dim ({self.hidden_dim}) must be divisible by "
                f"encoder.num_heads ({self.num_heads})"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"encoder.dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def num_blocks(self) -> int:
        """Distinct layer blocks allocated."""
        return 1 if self.share_weights else self.num_layers

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"Unknown encoder configuration key(s): {', '.join(unknown)}")
        return cls(**values)

    def with_overrides(self, **changes) -> "EncoderConfig":
        return replace(self, **changes)

    def same_architecture(self, other: "EncoderConfig") -> bool:
        """True when both configs produce identically shaped weights (dropout ignored)."""
        mine = self.to_dict()
        theirs = other.to_dict()
        mine.pop("dropout_rate")
        theirs.pop("dropout_rate")
        return mine == theirs
