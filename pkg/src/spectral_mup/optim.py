"""Adam/AdamW with per-group hyperparameters and a warmup-cosine schedule."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation
from .parameterization import GroupHyper, WeightDecayMode

DEFAULT_BETAS = (0.9, 0.95)


@dataclass
class OptState:
    """Adam moments for one parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = DEFAULT_BETAS[0]
    beta2: float = DEFAULT_BETAS[1]

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractViolation("betas must lie in (0, 1)")
        if self.m.shape != self.v.shape:
            raise ContractViolation("moment shapes differ")

    @classmethod
    def zeros_like(cls, param, beta1=DEFAULT_BETAS[0], beta2=DEFAULT_BETAS[1]):
        return cls(np.zeros_like(param), np.zeros_like(param), 0, beta1, beta2)


def adam_step_direction(state: OptState, grad, eps: float) -> np.ndarray:
    """Advance the moments with ``grad`` and return ``m_hat / (sqrt(v_hat) + eps)``."""
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != state.m.shape:
        raise ContractViolation(f"gradient shape {g.shape} != state shape {state.m.shape}")
    b1, b2 = state.beta1, state.beta2
    state.t += 1
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    return m_hat / (np.sqrt(v_hat) + eps)


def apply_update(param, rhat, g: GroupHyper, sched_mult: float = 1.0, wd_mode=WeightDecayMode.COUPLED):
    """Return the updated parameter.

    Coupled:   ``W - s*lr*wd*W - s*lr*rhat``
    Decoupled: ``W - s*wd*W - s*lr*rhat``

    The schedule multiplier ``s`` scales both terms.
    """
    param = np.asarray(param, dtype=np.float64)
    if param.shape != np.shape(rhat):
        raise ContractViolation(f"shape mismatch {param.shape} vs {np.shape(rhat)}")
    wd_mode = WeightDecayMode(wd_mode)
    decay = g.lr * g.wd if wd_mode is WeightDecayMode.COUPLED else g.wd
    return param - sched_mult * decay * param - sched_mult * g.lr * rhat


@dataclass(frozen=True)
class Schedule:
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.warmup_steps < 0 or self.total_steps < 1 or self.warmup_steps > self.total_steps:
            raise ContractViolation("need 0 <= warmup_steps <= total_steps and total_steps >= 1")


def schedule_multiplier(s: Schedule, step: int) -> float:
    """Linear warmup from 0 to 1, then cosine decay to 0 at ``total_steps``."""
    if step < 0:
        raise ContractViolation("step must be >= 0")
    if step > s.total_steps:
        warnings.warn(f"step {step} beyond total_steps {s.total_steps}; clamping", stacklevel=2)
        step = s.total_steps
    if step < s.warmup_steps:
        return step / s.warmup_steps
    if step == s.warmup_steps or s.total_steps == s.warmup_steps:
        return 1.0
    progress = (step - s.warmup_steps) / (s.total_steps - s.warmup_steps)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def warmup_steps(n_training: int, batch_seqs: int, seq_len: int) -> int:
    """``min(int(0.02 * n_training), int(375e6 / (B * L)))`` with B in sequences."""
    if n_training <= 0 or batch_seqs <= 0 or seq_len <= 0:
        raise ContractViolation("warmup_steps needs positive arguments")
    return min(int(0.02 * n_training), int(375e6 / (batch_seqs * seq_len)))


class AdamW:
    """Per-group AdamW over a dict of named parameters.

    Parameters
    ----------
    groups : dict
        ``name -> GroupHyper``.
    wd_mode : WeightDecayMode
    betas : tuple of float
    clip : float
        Global gradient-norm clip; 0 disables.
    """

    def __init__(self, groups, wd_mode=WeightDecayMode.COUPLED, betas=DEFAULT_BETAS, clip=0.0):
        self.groups = dict(groups)
        self.wd_mode = WeightDecayMode(wd_mode)
        self.betas = tuple(betas)
        self.clip = float(clip)
        self.states = {}
        self.last_rhat = {}

    def step(self, values: dict, grads: dict, sched_mult: float = 1.0):
        """Update ``values`` in place from ``grads``."""
        scale = 1.0
        if self.clip > 0:
            total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.clip:
                scale = self.clip / total
        for name, w in values.items():
            g = self.groups[name]
            state = self.states.get(name)
            if state is None:
                state = self.states[name] = OptState.zeros_like(w, *self.betas)
            rhat = adam_step_direction(state, grads[name] * scale, g.eps)
            self.last_rhat[name] = rhat
            values[name] = apply_update(w, rhat, g, sched_mult, self.wd_mode)

    def state_arrays(self) -> dict:
        out = {}
        for name, st in self.states.items():
            out[f"opt.m.{name}"] = st.m
            out[f"opt.v.{name}"] = st.v
        return out

    def state_meta(self) -> dict:
        return {"betas": list(self.betas), "clip": self.clip, "wd_mode": self.wd_mode.value,
                "t": {name: st.t for name, st in self.states.items()}}

    def load_state(self, arrays: dict, meta: dict):
        """Restore moments written by :meth:`state_arrays` and :meth:`state_meta`."""
        b1, b2 = self.betas
        self.states = {
            name: OptState(np.array(arrays[f"opt.m.{name}"]), np.array(arrays[f"opt.v.{name}"]), int(t), b1, b2)
            for name, t in meta["t"].items()
        }
