"""Per-role scaling rules: standard, Adam-muP and GQA-muP parameterizations.

Every trainable matrix belongs to a :class:`Role`.  :func:`resolve_group`
turns a :class:`Parameterization` (base hyperparameters plus a scheme) into the
concrete init std, output multiplier, learning rate, weight decay and Adam
epsilon for one role at width ``n`` and key/value repetition ``r``.

Under GQA-muP the key/value projections, which are stored at shape
``(n/r, n)`` and replicated ``r`` times in the forward pass, get

    lr = (1 + sqrt(r)) / (2 n) * lr0,     wd = 2 n / (1 + sqrt(r)) * wd0

so that ``lr * wd`` stays equal to ``lr0 * wd0`` and the ``r = 1`` case
coincides with an ordinary hidden layer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

from .exceptions import ContractViolation


class Role(str, enum.Enum):
    EMBEDDING = "Embedding"
    UNEMBEDDING = "Unembedding"
    ATTN_Q = "AttnQ"
    ATTN_O = "AttnO"
    ATTN_KV = "AttnKV"
    FFN_IN = "FFNIn"
    FFN_OUT = "FFNOut"


HIDDEN_ROLES = (Role.ATTN_Q, Role.ATTN_O, Role.ATTN_KV, Role.FFN_IN, Role.FFN_OUT)
MATRIX_LIKE_ROLES = HIDDEN_ROLES + (Role.UNEMBEDDING,)


class Kind(str, enum.Enum):
    SP = "sp"
    ADAM_MUP = "adam-mup"
    GQA_MUP = "gqa-mup"


class WeightDecayMode(str, enum.Enum):
    COUPLED = "coupled"
    DECOUPLED = "decoupled"


class BetaMode(str, enum.Enum):
    CONSTANT = "constant"
    COMPLETE_P = "complete-p"


class Ratio(NamedTuple):
    """A scale factor kept as ``num / den`` so reciprocal pairs cancel exactly."""

    num: float
    den: float

    @property
    def value(self) -> float:
        return self.num / self.den

    def inverse(self) -> "Ratio":
        return Ratio(self.den, self.num)


ONE = Ratio(1.0, 1.0)


@dataclass(frozen=True)
class Parameterization:
    kind: Kind = Kind.GQA_MUP
    base_lr: float = 2.0**-6
    base_wd: float = 0.0
    base_std: float = 1.0
    base_eps: float = 1e-9
    wd_mode: WeightDecayMode = WeightDecayMode.COUPLED
    beta_mode: BetaMode = BetaMode.COMPLETE_P
    base_beta: float = 1.0
    eps_scaling: bool = True
    init_as_variance: bool = False
    attn_scale: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "wd_mode", WeightDecayMode(self.wd_mode))
        object.__setattr__(self, "beta_mode", BetaMode(self.beta_mode))
        vals = (self.base_lr, self.base_wd, self.base_std, self.base_eps, self.base_beta)
        if not all(math.isfinite(v) for v in vals):
            raise ContractViolation("base hyperparameters must be finite")
        if self.base_lr <= 0:
            raise ContractViolation("base_lr must be positive")
        if self.base_wd < 0 or self.base_std < 0 or self.base_eps <= 0 or self.base_beta < 0:
            raise ContractViolation("base_wd, base_std, base_beta must be >= 0 and base_eps > 0")
        if self.attn_scale not in ("auto", "inv_d", "inv_sqrt_d"):
            raise ContractViolation(f"unknown attn_scale {self.attn_scale!r}")

    def with_(self, **changes) -> "Parameterization":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in asdict(self).items()}

    @property
    def logit_scale_rule(self) -> str:
        if self.attn_scale != "auto":
            return self.attn_scale
        return "inv_sqrt_d" if self.kind is Kind.SP else "inv_d"


@dataclass(frozen=True)
class GroupHyper:
    role: Role
    fan_in: int
    fan_out: int
    r: int
    init_std: float
    multiplier: float
    lr: float
    wd: float
    eps: float
    base_lr: float = field(default=1.0, repr=False)
    base_wd: float = field(default=0.0, repr=False)
    lr_scale: Ratio = field(default=ONE, repr=False)
    wd_scale: Ratio = field(default=ONE, repr=False)

    def __post_init__(self):
        if not (self.lr > 0 and self.init_std >= 0 and self.wd >= 0 and self.r >= 1):
            raise ContractViolation(f"invalid group hyperparameters: {self}")

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "fan_in": self.fan_in,
            "fan_out": self.fan_out,
            "r": self.r,
            "init_std": self.init_std,
            "multiplier": self.multiplier,
            "lr": self.lr,
            "wd": self.wd,
            "eps": self.eps,
        }

    def hyper_fields(self) -> tuple:
        """Everything except role and fan dimensions, for comparing groups."""
        return (self.init_std, self.multiplier, self.lr, self.wd, self.eps)


def default_fans(role: Role, n: int, r: int = 1, vocab: int | None = None):
    """``(fan_in, fan_out)`` for a role at width ``n``."""
    v = vocab if vocab is not None else n
    return {
        Role.EMBEDDING: (v, n),
        Role.UNEMBEDDING: (n, v),
        Role.ATTN_Q: (n, n),
        Role.ATTN_O: (n, n),
        Role.ATTN_KV: (n, n // r),
        Role.FFN_IN: (n, 4 * n),
        Role.FFN_OUT: (4 * n, n),
    }[role]


def resolve_group(p: Parameterization, role, n: int, r: int = 1, *, vocab=None) -> GroupHyper:
    """Resolve the hyperparameters of one role.

    Parameters
    ----------
    p : Parameterization
    role : Role or str
    n : int
        Model width.
    r : int
        Key/value repetition factor; only consulted for ``Role.ATTN_KV``.
    vocab : int, optional
        Only used to fill in fan dimensions of the (un)embedding.
    """
    try:
        role = Role(role)
    except ValueError:
        raise ContractViolation(f"unknown role {role!r}") from None
    if n < 1 or r < 1:
        raise ContractViolation("n and r must be >= 1")
    if role is not Role.ATTN_KV:
        r_eff = 1
    else:
        r_eff = int(r)
    fan_in, fan_out = default_fans(role, n, r_eff, vocab)

    s0 = p.base_std
    hidden_std = s0 / math.sqrt(n)
    mult = 1.0
    eps_scaled = p.kind is not Kind.SP and p.eps_scaling and role is not Role.EMBEDDING

    if p.kind is Kind.SP:
        std, lr_scale = hidden_std, ONE
    elif role is Role.EMBEDDING:
        std, lr_scale = s0, ONE
    elif role is Role.UNEMBEDDING:
        std, lr_scale, mult = s0, ONE, 1.0 / n
    elif role is Role.ATTN_KV and p.kind is Kind.GQA_MUP:
        std, lr_scale = hidden_std, Ratio(1.0 + math.sqrt(r_eff), 2.0 * n)
    else:
        std, lr_scale = hidden_std, Ratio(1.0, float(n))

    if p.init_as_variance:
        # table entry read as a variance rather than a standard deviation
        std = math.sqrt(std)
    if p.wd_mode is WeightDecayMode.DECOUPLED:
        wd_scale = ONE
    else:
        wd_scale = lr_scale.inverse()

    return GroupHyper(
        role=role,
        fan_in=fan_in,
        fan_out=fan_out,
        r=r_eff,
        init_std=std,
        multiplier=mult,
        lr=p.base_lr * lr_scale.value,
        wd=p.base_wd * wd_scale.value,
        eps=p.base_eps / n if eps_scaled else p.base_eps,
        base_lr=p.base_lr,
        base_wd=p.base_wd,
        lr_scale=lr_scale,
        wd_scale=wd_scale,
    )


def resolve_beta(p: Parameterization, L: int) -> float:
    """Residual branch multiplier for depth ``L``."""
    if L < 1:
        raise ContractViolation("L must be >= 1")
    if p.beta_mode is BetaMode.COMPLETE_P:
        return p.base_beta / L
    return p.base_beta


def tau_epoch(lambda0: float, eta0: float, iters: float) -> float:
    """Training-time constant ``1 / (lambda0 * eta0 * iters)``."""
    if not (lambda0 > 0 and eta0 > 0 and iters > 0):
        raise ContractViolation("tau_epoch needs positive lambda0, eta0 and iters")
    return 1.0 / (lambda0 * eta0 * iters)


def wd_lr_balance_check(g: GroupHyper) -> float:
    """``(lr * wd) / (lr0 * wd0)`` evaluated on the exact scale factors.

    The learning-rate and weight-decay factors are kept as numerator and
    denominator pairs, so a coupled rule whose factors are reciprocal returns
    exactly ``1.0``.
    """
    num = g.lr_scale.num * g.wd_scale.num
    den = g.lr_scale.den * g.wd_scale.den
    return num / den


def resolve_table(p: Parameterization, n: int, r: int, vocab: int) -> dict:
    """Resolved :class:`GroupHyper` for every role, keyed by role name."""
    return {role.value: resolve_group(p, role, n, r, vocab=vocab) for role in Role}
