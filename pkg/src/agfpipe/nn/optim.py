"""Adam optimizer with per-parameter moment slots.

Slots are keyed by parameter name, and only parameters whose gradients are
presented to step() get touched. Each slot carries its own step counter, so
a multi-head network can update its shared block every batch while a branch
advances only when its task is drawn.
"""

import numpy as np


class Adam:
    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.slots = {}  # name -> {"m": array, "v": array, "t": int}

    def step(self, params: dict, grads: dict) -> None:
        """Update params in place for every name present in grads."""
        for name in sorted(grads):
            g = grads[name]
            p = params[name]
            slot = self.slots.get(name)
            if slot is None:
                slot = {"m": np.zeros_like(p), "v": np.zeros_like(p), "t": 0}
                self.slots[name] = slot
            slot["t"] += 1
            t = slot["t"]
            slot["m"] = self.beta1 * slot["m"] + (1.0 - self.beta1) * g
            slot["v"] = self.beta2 * slot["v"] + (1.0 - self.beta2) * g * g
            m_hat = slot["m"] / (1.0 - self.beta1 ** t)
            v_hat = slot["v"] / (1.0 - self.beta2 ** t)
            p -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)

    def state_tensors(self) -> dict:
        """Flatten slots into named arrays for checkpointing."""
        out = {}
        for name, slot in self.slots.items():
            out[f"{name}/adam_m"] = slot["m"]
            out[f"{name}/adam_v"] = slot["v"]
            out[f"{name}/adam_t"] = np.array([slot["t"]], dtype=np.int64)
        return out

    def load_state_tensors(self, tensors: dict) -> None:
        self.slots = {}
        for key, arr in tensors.items():
            if key.endswith("/adam_m"):
                name = key[:-len("/adam_m")]
                self.slots.setdefault(name, {})["m"] = arr.copy()
            elif key.endswith("/adam_v"):
                name = key[:-len("/adam_v")]
                self.slots.setdefault(name, {})["v"] = arr.copy()
            elif key.endswith("/adam_t"):
                name = key[:-len("/adam_t")]
                self.slots.setdefault(name, {})["t"] = int(arr[0])
