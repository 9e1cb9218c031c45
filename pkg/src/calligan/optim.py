"""Parameter initialization, Adam, and the exponential learning-rate schedule.

The generator and discriminator each get their own Adam instance: the two
nets may use different first-moment coefficients and their state must never
mix.  Learning rates decay by a fixed factor once per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericsError
from .tensor import Tensor

__all__ = ["TrainConfig", "Adam", "init_params", "adam_step", "lr_at_epoch"]


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the training loop; every field maps to a CLI flag."""

    lr_g: float = 0.001
    lr_d: float = 0.001
    beta_g: float = 0.5
    beta_d: float = 0.5
    adam_beta2: float = 0.999
    decay: float = 0.9
    epochs: int = 100
    batch_size: int = 1
    init_std: float = 0.02
    seed: int = 0
    grad_clip: float = 0.0  # 0 disables; otherwise clamps each grad to +-clip

    def __post_init__(self):
        for name in ("lr_g", "lr_d"):
            lr = getattr(self, name)
            if not 0.0 < lr <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {lr}")
        for name in ("beta_g", "beta_d", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init_std < 0:
            raise ConfigError(f"init_std must be >= 0, got {self.init_std}")
        if self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")


def init_params(shapes: dict[str, tuple[int, ...]], std: float, seed: int,
                dtype=np.float32) -> dict[str, Tensor]:
    """Build trainable tensors for the given named shapes.

    Names ending in ``.w`` draw from Normal(0, std^2); ``.b`` and ``.beta``
    start at zero; ``.gamma`` starts at one.  Draw order follows sorted names
    so the result depends only on (shapes, std, seed).
    """
    if std < 0:
        raise ConfigError(f"init std must be >= 0, got {std}")
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".w"):
            data = rng.normal(0.0, std, shape) if std > 0 else np.zeros(shape)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith((".b", ".beta")):
            data = np.zeros(shape)
        else:
            raise ConfigError(f"parameter name '{name}' has no recognized suffix "
                              "(.w/.b/.gamma/.beta)")
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float, beta2: float, eps: float) -> float:
    """One bias-corrected Adam update on a single array, in place.

    ``t`` is the 1-based step count including this step.  Returns the largest
    absolute parameter change.
    """
    if grad.shape != param.shape:
        raise DimensionError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite gradient passed to adam_step")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    delta = lr * m_hat / (np.sqrt(v_hat) + eps)
    param -= delta
    return float(np.max(np.abs(delta))) if delta.size else 0.0


def lr_at_epoch(initial: float, decay: float, epoch: int) -> float:
    """Learning rate after ``epoch`` full decay steps: initial * decay**epoch."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return initial * decay ** epoch


class Adam(object):
    """Adam over a named parameter dict, with state that round-trips bitwise.

    Moment buffers are allocated lazily on first update per parameter and are
    keyed by the parameter names, so checkpointing reduces to dumping plain
    arrays plus the step counter.
    """

    def __init__(self, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float = 0.0):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"Adam betas must be in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ConfigError(f"Adam eps must be > 0, got {eps}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], lr: float) -> float:
        """Apply one update to every parameter that has a gradient.

        Returns the max |delta| across all parameters, for the training log.
        """
        self.t += 1
        worst = 0.0
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            g = p.grad
            if self.grad_clip > 0:
                g = np.clip(g, -self.grad_clip, self.grad_clip)
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            worst = max(worst, adam_step(p.data, g, self.m[name], self.v[name],
                                         self.t, lr, self.beta1, self.beta2, self.eps))
        return worst

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of the moment buffers for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name, arr in self.m.items():
            out["m." + name] = arr
        for name, arr in self.v.items():
            out["v." + name] = arr
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.m = {k[2:]: np.array(v) for k, v in arrays.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in arrays.items() if k.startswith("v.")}
        self.t = t
