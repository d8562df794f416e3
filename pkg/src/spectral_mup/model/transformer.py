"""Decoder-only transformer with grouped-query attention.

Layout per block (pre-norm, parameter-free RMS norm, no biases)::

    x = x + beta * W_o . Attn(W_q xn, W_k xn, W_v xn)       xn = rmsnorm(x)
    x = x + beta * W_out . gelu(W_in rmsnorm(x))

Key/value weights are stored unreplicated at shape ``(n/r, n)``; replication
happens inside attention, so their gradients sum over all ``r`` uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..exceptions import ContractViolation
from ..linalg import RngStream, gaussian_matrix
from ..parameterization import GroupHyper, Parameterization, Role, resolve_beta, resolve_group
from .autodiff import Tape


@dataclass(frozen=True)
class ModelConfig:
    n: int = 64
    L: int = 2
    H: int = 4
    kv_heads: int = 4
    vocab: int = 256
    seq_len: int = 64
    param: Parameterization = field(default_factory=Parameterization)
    pos_emb: bool = False

    def __post_init__(self):
        if self.H < 1 or self.n % self.H:
            raise ContractViolation(f"n={self.n} must be a multiple of H={self.H}")
        if self.kv_heads < 1 or self.H % self.kv_heads:
            raise ContractViolation(f"H={self.H} must be a multiple of kv_heads={self.kv_heads}")
        if self.L < 0 or self.seq_len < 1 or self.vocab < 2:
            raise ContractViolation("need L >= 0, seq_len >= 1, vocab >= 2")

    @property
    def d_head(self) -> int:
        return self.n // self.H

    @property
    def r(self) -> int:
        return self.H // self.kv_heads

    @property
    def beta(self) -> float:
        return resolve_beta(self.param, max(self.L, 1))

    @property
    def logit_scale(self) -> float:
        d = self.d_head
        return 1.0 / d if self.param.logit_scale_rule == "inv_d" else 1.0 / math.sqrt(d)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "L": self.L,
            "H": self.H,
            "kv_heads": self.kv_heads,
            "r": self.r,
            "d_head": self.d_head,
            "vocab": self.vocab,
            "seq_len": self.seq_len,
            "pos_emb": self.pos_emb,
            "param": self.param.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        d = dict(d)
        d.pop("r", None)
        d.pop("d_head", None)
        d["param"] = Parameterization(**d["param"])
        return cls(**d)


def param_layout(cfg: ModelConfig):
    """Ordered ``(name, role, shape)`` triples of every trainable matrix."""
    n, kv = cfg.n, cfg.n // cfg.r
    out = [("embed", Role.EMBEDDING, (cfg.vocab, n))]
    if cfg.pos_emb:
        out.append(("pos", Role.EMBEDDING, (cfg.seq_len, n)))
    for i in range(cfg.L):
        out += [
            (f"layers.{i}.q", Role.ATTN_Q, (n, n)),
            (f"layers.{i}.k", Role.ATTN_KV, (kv, n)),
            (f"layers.{i}.v", Role.ATTN_KV, (kv, n)),
            (f"layers.{i}.o", Role.ATTN_O, (n, n)),
            (f"layers.{i}.ffn_in", Role.FFN_IN, (4 * n, n)),
            (f"layers.{i}.ffn_out", Role.FFN_OUT, (n, 4 * n)),
        ]
    out.append(("unembed", Role.UNEMBEDDING, (n, cfg.vocab)))
    return out


@dataclass
class TransformerParams:
    """Named weights with their gradients and resolved group hyperparameters."""

    values: dict
    groups: dict
    grads: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, name):
        return self.values[name]

    def role(self, name) -> Role:
        return self.groups[name].role

    def layer_of(self, name) -> int:
        return int(name.split(".")[1]) if name.startswith("layers.") else -1

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}

    def copy(self) -> "TransformerParams":
        return TransformerParams(
            {k: v.copy() for k, v in self.values.items()},
            dict(self.groups),
            {k: v.copy() for k, v in self.grads.items()},
        )


def resolve_groups(cfg: ModelConfig) -> dict:
    table = {}
    for name, role, _ in param_layout(cfg):
        table[name] = resolve_group(cfg.param, role, cfg.n, cfg.r, vocab=cfg.vocab)
    return table


def init_params(cfg: ModelConfig, rng: RngStream) -> TransformerParams:
    """Sample every matrix i.i.d. Gaussian at its role's init std.

    Each tensor draws from its own child stream (addressed by layout index), so
    a tensor's values do not depend on the shapes of the tensors before it.
    """
    groups = resolve_groups(cfg)
    values = {}
    for idx, (name, _, shape) in enumerate(param_layout(cfg)):
        values[name] = gaussian_matrix(rng.child(idx), shape[0], shape[1], groups[name].init_std)
    params = TransformerParams(values, groups)
    params.zero_grad()
    return params


def _check_tokens(cfg: ModelConfig, tokens, extra=0):
    toks = np.asarray(tokens)
    if toks.ndim == 1:
        toks = toks[None, :]
    if toks.ndim != 2 or toks.shape[1] < 1 + extra or toks.shape[0] < 1:
        raise ContractViolation(f"tokens must be a 1-D or 2-D array with at least {1 + extra} per row, "
                                f"got shape {toks.shape}")
    if not np.issubdtype(toks.dtype, np.integer):
        raise ContractViolation("tokens must be integers")
    if toks.min() < 0 or toks.max() >= cfg.vocab:
        raise ContractViolation(f"token id out of range [0, {cfg.vocab})")
    if toks.shape[1] > cfg.seq_len + extra:
        raise ContractViolation(f"sequence length {toks.shape[1]} exceeds seq_len={cfg.seq_len}")
    return toks


def _forward(params, cfg, toks, tape, probes=None):
    nodes = {k: tape.leaf(v, name=k) for k, v in params.values.items()}
    beta = cfg.beta
    x = tape.embed(nodes["embed"], toks)
    if cfg.pos_emb:
        x = tape.add(x, tape.embed(nodes["pos"], np.arange(toks.shape[1])[None, :]))
    if probes is not None:
        probes["embedding"] = x.value
    for i in range(cfg.L):
        pre = f"layers.{i}."
        xn = tape.rmsnorm(x)
        q = tape.linear(xn, nodes[pre + "q"])
        k = tape.linear(xn, nodes[pre + "k"])
        v = tape.linear(xn, nodes[pre + "v"])
        att = tape.gqa_attention(q, k, v, cfg.H, cfg.kv_heads, cfg.logit_scale)
        ao = tape.linear(att, nodes[pre + "o"])
        x = tape.add(x, tape.scale(ao, beta))
        hn = tape.rmsnorm(x)
        u = tape.linear(hn, nodes[pre + "ffn_in"])
        fo = tape.linear(tape.gelu(u), nodes[pre + "ffn_out"])
        x = tape.add(x, tape.scale(fo, beta))
        if probes is not None:
            probes[i] = {
                "attn_q": q.value,
                "attn_k": np.tile(k.value, (1, 1, cfg.r)),
                "attn_v": np.tile(v.value, (1, 1, cfg.r)),
                "attn_out": ao.value,
                "ffn_in": u.value,
                "ffn_out": fo.value,
                "residual": x.value,
            }
    hn = tape.rmsnorm(x)
    logits = tape.scale(tape.project(hn, nodes["unembed"]), params.groups["unembed"].multiplier)
    return logits, nodes


def forward(params: TransformerParams, cfg: ModelConfig, tokens):
    """Run the model; returns ``(logits, tape)``.

    ``logits`` has shape ``(T, vocab)`` for a 1-D token sequence and
    ``(B, T, vocab)`` for a batch.
    """
    toks = _check_tokens(cfg, tokens)
    tape = Tape()
    logits, _ = _forward(params, cfg, toks, tape)
    out = logits.value
    return (out[0] if np.asarray(tokens).ndim == 1 else out), tape


def loss_and_backward(params: TransformerParams, cfg: ModelConfig, tokens, probes=None) -> float:
    """Mean next-token cross-entropy; fills ``params.grads`` in place.

    ``tokens`` may be one longer than ``seq_len``: the last position is only a
    target.  If ``probes`` is a dict it receives the activations of the forward
    pass, as :func:`collect_activations` would return for ``tokens[:, :-1]``.
    """
    toks = _check_tokens(cfg, tokens, extra=1)
    if toks.shape[1] < 2:
        raise ContractViolation("need at least 2 tokens for next-token loss")
    tape = Tape()
    logits, nodes = _forward(params, cfg, toks[:, :-1], tape, probes)
    loss = tape.cross_entropy(logits, toks[:, 1:])
    tape.backward(loss)
    params.grads = {
        k: (node.grad if node.grad is not None else np.zeros_like(node.value))
        for k, node in nodes.items()
    }
    return float(loss.value)


def loss_only(params: TransformerParams, cfg: ModelConfig, tokens) -> float:
    toks = _check_tokens(cfg, tokens, extra=1)
    tape = Tape()
    logits, _ = _forward(params, cfg, toks[:, :-1], tape)
    return float(tape.cross_entropy(logits, toks[:, 1:]).value)


PROBE_ROLES = {
    "attn_q": Role.ATTN_Q,
    "attn_k": Role.ATTN_KV,
    "attn_v": Role.ATTN_KV,
    "attn_out": Role.ATTN_O,
    "ffn_in": Role.FFN_IN,
    "ffn_out": Role.FFN_OUT,
}


def collect_activations(params, cfg, tokens) -> dict:
    """Pre-activations at every probe point of every layer.

    Returns ``{"embedding": array, 0: {...}, 1: {...}, ...}`` where each layer
    maps probe names (``attn_q``, ``attn_k``, ``attn_v``, ``attn_out``,
    ``ffn_in``, ``ffn_out``, ``residual``) to arrays of shape (B, T, width).
    Key/value probes are the replicated (width ``n``) vectors.
    """
    toks = _check_tokens(cfg, tokens)
    probes = {}
    _forward(params, cfg, toks, Tape(), probes)
    return probes


def measure_activations(params, cfg, tokens, probe: int) -> dict:
    """Probe vectors of layer ``probe`` plus the embedding output."""
    if not 0 <= probe < cfg.L:
        raise ContractViolation(f"probe layer {probe} outside [0, {cfg.L})")
    probes = collect_activations(params, cfg, tokens)
    out = dict(probes[probe])
    out["embedding"] = probes["embedding"]
    return out


def token_norm(h) -> float:
    """Root-mean-square over tokens of the per-token 2-norm of ``h``."""
    h = np.asarray(h)
    flat = h.reshape(-1, h.shape[-1])
    return float(np.sqrt(np.mean(np.sum(flat * flat, axis=1))))


def group_table(params: TransformerParams) -> dict:
    """Distinct resolved hyperparameters per role, for manifests."""
    out = {}
    for g in params.groups.values():
        out.setdefault(g.role.value, g.to_dict())
    return out


__all__ = [
    "GroupHyper",
    "ModelConfig",
    "TransformerParams",
    "collect_activations",
    "forward",
    "init_params",
    "loss_and_backward",
    "loss_only",
    "measure_activations",
    "param_layout",
    "token_norm",
]
