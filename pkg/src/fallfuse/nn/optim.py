"""SGD-with-momentum and Adam, updating named parameter arrays in place."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "Adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.algorithm not in ("SGD", "Adam"):
            raise ConfigError(f"optimizer algorithm must be 'SGD' or 'Adam', got {self.algorithm!r}")
        # lr == 0 is accepted as a null optimizer (parameters stay fixed)
        if not self.lr >= 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"Adam betas must be in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"Adam eps must be > 0, got {self.eps}")

    def to_dict(self):
        return asdict(self)


class Optimizer:
    """Holds per-parameter state (velocity or Adam moments) keyed by name."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.state: dict[str, dict] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self.t += 1
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
            st = self.state.setdefault(name, {})
            if cfg.algorithm == "SGD":
                if cfg.momentum:
                    v = st.get("velocity")
                    v = g.copy() if v is None else cfg.momentum * v + g
                    st["velocity"] = v
                    p -= cfg.lr * v
                else:
                    p -= cfg.lr * g
            else:
                m = st.get("m", np.zeros_like(p))
                v = st.get("v", np.zeros_like(p))
                m = cfg.beta1 * m + (1 - cfg.beta1) * g
                v = cfg.beta2 * v + (1 - cfg.beta2) * (g * g)
                st["m"], st["v"] = m, v
                m_hat = m / (1 - cfg.beta1 ** self.t)
                v_hat = v / (1 - cfg.beta2 ** self.t)
                p -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

