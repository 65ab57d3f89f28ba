"""Adam optimizer and finite-difference gradient checking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Parameter


class NonFiniteGradient(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam. Deterministic given inputs; a non-finite
    gradient rejects the whole step and names the offending parameter."""

    def __init__(self, params: list[Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NonFiniteGradient(f"non-finite gradient for parameter '{p.name}'")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([self.t], dtype=np.float64)}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"adam.m.{p.name}"] = m
            out[f"adam.v.{p.name}"] = v
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]):
        self.t = int(state["adam.t"][0])
        for i, p in enumerate(self.params):
            self.m[i] = np.asarray(state[f"adam.m.{p.name}"], dtype=p.data.dtype).copy()
            self.v[i] = np.asarray(state[f"adam.v.{p.name}"], dtype=p.data.dtype).copy()


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr to 0 over total_steps."""
    if total_steps <= 0:
        return base_lr
    frac = min(max(step / total_steps, 0.0), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    worst_name: str = ""
    worst_index: tuple = ()
    tolerance: float = 1e-4
    per_tensor: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tolerance

    def __str__(self):
        status = "PASS" if self.ok else "FAIL"
        return (f"grad_check {status}: max_rel_err={self.max_rel_err:.3e} "
                f"(tol {self.tolerance:.1e}) worst='{self.worst_name}'{list(self.worst_index)}")


def grad_check(loss_fn, tensors: dict[str, Tensor], h: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``loss_fn`` rebuilds the scalar loss from the current tensor contents;
    ``tensors`` maps names to every parameter and input to be checked (all
    fp64). Relative error uses a 1e-4 scale floor so that finite-difference
    noise on exactly-zero gradients does not register as failure.
    """
    for name, t in tensors.items():
        if t.data.dtype != np.float64:
            raise ValueError(f"grad_check requires fp64 tensors, got {t.data.dtype} for '{name}'")
        t.requires_grad = True
        t.grad = None

    loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors.items()}

    report = GradCheckReport(tolerance=tolerance)
    with ad.no_grad():
        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = loss_fn().item()
                flat[i] = orig - h
                f_minus = loss_fn().item()
                flat[i] = orig
                num[i] = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-4)
            rel = np.abs(a - num) / denom
            worst = int(np.argmax(rel))
            report.per_tensor[name] = float(rel[worst])
            if rel[worst] > report.max_rel_err:
                report.max_rel_err = float(rel[worst])
                report.worst_name = name
                report.worst_index = np.unravel_index(worst, t.data.shape)
    return report
