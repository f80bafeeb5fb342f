"""Adam with lazy, row-sparse updates."""

from __future__ import annotations

import numpy as np


class SparseAdam:
    """Adam over named parameter arrays, updating only rows that get gradient.

    Bias correction uses the optimizer-wide step counter, so a row touched
    for the first time at step ``t`` is corrected as if its moments had been
    zero for the preceding steps.
    """

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def ensure(self, name, shape):
        """Create or grow (zero-padded) the moment buffers for ``name``."""
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
            return
        cur = self.m[name].shape
        if cur[0] < shape[0]:
            pad = np.zeros((shape[0] - cur[0],) + tuple(cur[1:]))
            self.m[name] = np.concatenate([self.m[name], pad])
            self.v[name] = np.concatenate([self.v[name], pad.copy()])

    def step(self, params: dict, grads: dict, lr=None) -> None:
        """Apply one update. ``grads`` maps names to :class:`SparseGrad`."""
        self.t += 1
        lr = self.lr if lr is None else lr
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if g is None or len(g.rows) == 0:
                continue
            values = g.values
            flat = values.reshape(len(g.rows), -1)
            nz = np.any(flat != 0.0, axis=1)
            if not nz.all():
                rows, values = g.rows[nz], values[nz]
            else:
                rows = g.rows
            if len(rows) == 0:
                continue
            p = params[name]
            self.ensure(name, p.shape)
            m = self.m[name][rows] * self.beta1 + (1.0 - self.beta1) * values
            v = self.v[name][rows] * self.beta2 + (1.0 - self.beta2) * values * values
            self.m[name][rows] = m
            self.v[name][rows] = v
            p[rows] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        out = {"t": np.array(self.t)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m, self.v = {}, {}
        for key, value in state.items():
            if key.startswith("m."):
                self.m[key[2:]] = np.array(value, dtype=float)
            elif key.startswith("v."):
                self.v[key[2:]] = np.array(value, dtype=float)
