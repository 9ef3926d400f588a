"""SGD with momentum and L2 weight decay, and the step learning-rate schedule."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError


@dataclass
class OptimizerConfig:
    lr0: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_factor: float = 10.0
    lr_decay_every_epochs: int = 10
    max_epochs: int = 25
    early_stop_patience: int = 5
    batch_quads: int = 16
    seed: int = 0

    def __post_init__(self):
        # lr0 == 0 is allowed: a frozen run is a useful early-stopping probe
        if self.lr0 < 0:
            raise ConfigError("lr0 must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.lr_decay_every_epochs < 1 or self.lr_decay_factor <= 0:
            raise ConfigError("invalid learning-rate decay settings")
        if self.max_epochs < 1 or self.batch_quads < 1:
            raise ConfigError("max_epochs and batch_quads must be >= 1")


def lr_at(cfg, epoch):
    """Step schedule: divide by ``lr_decay_factor`` every
    ``lr_decay_every_epochs`` epochs (0-based epoch index)."""
    return cfg.lr0 / cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every_epochs)


def sgd_update(params, grads, velocities, lr, momentum, weight_decay):
    """In place: ``v = m*v + (g + wd*p)``, ``p -= lr*v``, then ``g = 0``.

    Decay applies to every parameter, weights and biases alike.
    """
    for name, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NumericError(f"non-finite gradient in parameter #{name} "
                               f"({bad} of {g.size} entries)")
    for p, g, v in zip(params, grads, velocities):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
        g.fill(0.0)
