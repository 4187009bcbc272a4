"""Run configuration shared by the trainer, checkpoints and the CLI."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .qsim import ConfigurationError
from .qtransformer import EncoderConfig


@dataclass(frozen=True)
class TrainConfig:
    k: int = 8
    n_qubits: int = 4
    depth: int = 2
    blocks: int = 1
    sharing_mode: str = "1QKV"
    fusion_mode: str = "per-position"
    entangle: str = "ring"
    lr: float = 0.02
    epochs: int = 12
    batch_size: int = 8
    seed: int = 7
    tau: float = 0.5
    pos_weight: float = 1.0
    input_dim: int = 0  # 0: take it from the data

    def __post_init__(self):
        for name in ("k", "n_qubits", "blocks", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.depth < 0:
            raise ConfigurationError("depth must be >= 0")
        if self.lr < 0:
            raise ConfigurationError("lr must be >= 0")
        if not 0 < self.tau < 1:
            raise ConfigurationError("tau must be in (0, 1)")
        if self.pos_weight <= 0:
            raise ConfigurationError("pos_weight must be > 0")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def encoder(self, input_dim: int = None) -> EncoderConfig:
        d = input_dim if input_dim is not None else self.input_dim
        return EncoderConfig(
            k=self.k,
            input_dim=d,
            n_qubits=self.n_qubits,
            depth=self.depth,
            blocks=self.blocks,
            sharing_mode=self.sharing_mode,
            fusion_mode=self.fusion_mode,
            entangle=self.entangle,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_strings(cls, values: dict) -> "TrainConfig":
        """Build from string values (checkpoint blocks, key=value config files)."""
        kwargs = {}
        for f in fields(cls):
            if f.name in values:
                raw = values[f.name]
                typ = f.type if isinstance(f.type, type) else {"int": int, "float": float, "str": str}[f.type]
                try:
                    kwargs[f.name] = typ(raw)
                except ValueError:
                    raise ConfigurationError(f"bad value for {f.name}: {raw!r}") from None
        return cls(**kwargs)
