"""Model hyperparameter record."""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

from ..errors import ConfigError
from ..tokenizer import NULL_BIN


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and switches of the pause-augmented encoder.

    d_model must be even: the duration and pause embeddings each occupy
    d_model/2 and are concatenated before being added to the word and
    position embeddings. The reference instantiation uses d_model=768
    (384 + 384 halves); desk-scale runs use much smaller sizes.
    disable_duration / disable_pause zero out the corresponding half
    while keeping d_model fixed, so ablations leave the encoder's
    parameter count untouched.
    """

    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_seq_len: int = 64
    n_time_bins: int = NULL_BIN + 1  # 300 real bins + the NULL_BIN row
    dropout_rate: float = 0.1
    disable_duration: bool = False
    disable_pause: bool = False

    def __post_init__(self) -> None:
        if self.vocab_size < 6:
            raise ConfigError(f"vocab_size must cover reserved ids + 1, got {self.vocab_size}")
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be a positive even integer, got {self.d_model}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"n_heads ({self.n_heads}) must divide d_model ({self.d_model})"
            )
        if self.d_ff < 1:
            raise ConfigError(f"d_ff must be >= 1, got {self.d_ff}")
        if self.max_seq_len < 2:  # room for [CLS] and [SEP] at least
            raise ConfigError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if self.n_time_bins != NULL_BIN + 1:
            raise ConfigError(f"n_time_bins is fixed at {NULL_BIN + 1}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def d_half(self) -> int:
        return self.d_model // 2

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)
