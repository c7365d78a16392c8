"""Adam optimizer with bias-corrected moment estimates, plus gradient clipping."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeMismatchError


class AdamState:
    """First/second moment buffers and step counter for one parameter set."""

    def __init__(self, params, alpha=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


class Adam:
    """Bias-corrected Adam over an ordered list of named parameters.

    param -= alpha * m_hat / (sqrt(v_hat) + epsilon)
    """

    def __init__(self, params, alpha=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        # params: dict name -> Tensor or list of Tensors; order is the update order
        if isinstance(params, dict):
            self.names = list(params.keys())
            self.params = list(params.values())
        else:
            self.params = list(params)
            self.names = [f"param{i}" for i in range(len(self.params))]
        self.state = AdamState(self.params, alpha, beta1, beta2, epsilon)

    def step(self):
        st = self.state
        st.t += 1
        bc1 = 1.0 - st.beta1 ** st.t
        bc2 = 1.0 - st.beta2 ** st.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeMismatchError("adam_step", p.data.shape, g.shape)
            st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g
            st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * (g * g)
            m_hat = st.m[i] / bc1
            v_hat = st.v[i] / bc2
            p.data -= st.alpha * m_hat / (np.sqrt(v_hat) + st.epsilon)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_tensors(self):
        """Moment buffers keyed for checkpointing."""
        out = {}
        for name, m, v in zip(self.names, self.state.m, self.state.v):
            out[f"adam.m.{name}"] = m
            out[f"adam.v.{name}"] = v
        return out

    def load_state_tensors(self, tensors, t):
        for i, name in enumerate(self.names):
            self.state.m[i] = np.array(tensors[f"adam.m.{name}"], dtype=self.params[i].dtype)
            self.state.v[i] = np.array(tensors[f"adam.v.{name}"], dtype=self.params[i].dtype)
        self.state.t = int(t)


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = total ** 0.5
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm
