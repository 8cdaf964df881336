"""Per-tensor AdamW with coupled or decoupled weight decay.

Each tensor trains under its own (lr, eps, weight_decay, beta1, beta2),
already composed from the transfer rules and any per-module multipliers.
The schedule multiplier post-multiplies every tensor's learning rate.  With
the coupled variant ("adamw") the decay term is premultiplied by the
scheduled learning rate; the decoupled variant ("adamlh") subtracts
``weight_decay * param`` directly, so the two coincide exactly at zero decay.
"""

from __future__ import annotations

import numpy as np

from hpxfer.model import DeskTransformer

__all__ = ["PerTensorAdamW", "adamw_scalar_step"]


class PerTensorAdamW:
    def __init__(self, model: DeskTransformer, decay_variant: str = "adamw"):
        if decay_variant not in ("adamw", "adamlh"):
            raise ValueError(f"unknown decay variant {decay_variant!r}")
        self.model = model
        self.decay_variant = decay_variant
        self.hps = {name: model.tensor_hyperparams(name) for name in model.params}
        self.m = {name: np.zeros_like(p) for name, p in model.params.items()}
        self.v = {name: np.zeros_like(p) for name, p in model.params.items()}
        self.step_count = 0

    def step(
        self,
        grads: dict[str, np.ndarray],
        schedule_mult: float = 1.0,
        collect_update_rms: bool = False,
    ) -> dict[str, float] | None:
        self.step_count += 1
        t = self.step_count
        update_rms: dict[str, float] | None = {} if collect_update_rms else None
        for name, param in self.model.params.items():
            hp = self.hps[name]
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            b1, b2 = hp["beta1"], hp["beta2"]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            lr = hp["lr"] * schedule_mult
            adaptive = m_hat / (np.sqrt(v_hat) + hp["eps"])
            if self.decay_variant == "adamw":
                delta = lr * (adaptive + hp["weight_decay"] * param)
            else:
                delta = lr * adaptive + hp["weight_decay"] * param
            param -= delta
            if update_rms is not None:
                update_rms[name] = float(np.sqrt(np.mean(delta * delta)))
        return update_rms


def adamw_scalar_step(
    theta: float,
    grad: float,
    lr: float,
    eps: float,
    weight_decay: float,
) -> float:
    """Closed-form first AdamW step from fresh state; oracle for the tests.

    At t=1 the bias corrections cancel the (1 - beta) factors exactly, so the
    update is lr * (g / (|g| + eps) + weight_decay * theta) for any betas.
    """
    return theta - lr * (grad / (abs(grad) + eps) + weight_decay * theta)
