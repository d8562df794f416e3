"""A small reverse-mode tape over the handful of ops the transformer needs.

Each op computes its output eagerly and, when any input requires a gradient,
appends a closure to the tape that propagates the output gradient back to its
inputs.  ``Tape.backward`` walks the closures in reverse order.
"""

from __future__ import annotations

import math

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
NORM_EPS = 1e-12


class Node:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    @property
    def shape(self):
        return self.value.shape


class Tape:
    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def leaf(self, value, requires_grad=True, name=None):
        return Node(np.asarray(value, dtype=np.float64), requires_grad, name)

    def _out(self, value, inputs, backward):
        node = Node(value, any(i.requires_grad for i in inputs))
        if node.requires_grad:
            self.records.append((node, backward))
        return node

    def backward(self, out: Node, seed=None):
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for node, fn in reversed(self.records):
            if node.grad is not None:
                fn(node.grad)

    # -- ops -----------------------------------------------------------------

    def embed(self, table: Node, ids):
        ids = np.asarray(ids)
        out = table.value[ids]

        def back(g):
            if table.requires_grad:
                gt = np.zeros_like(table.value)
                np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
                table.accumulate(gt)

        return self._out(out, [table], back)

    def linear(self, x: Node, w: Node):
        """``x @ w.T`` for ``w`` stored as (out, in)."""
        out = x.value @ w.value.T

        def back(g):
            if x.requires_grad:
                x.accumulate(g @ w.value)
            if w.requires_grad:
                w.accumulate(g.reshape(-1, g.shape[-1]).T @ x.value.reshape(-1, x.shape[-1]))

        return self._out(out, [x, w], back)

    def project(self, x: Node, w: Node):
        """``x @ w`` for ``w`` stored as (in, out)."""
        out = x.value @ w.value

        def back(g):
            if x.requires_grad:
                x.accumulate(g @ w.value.T)
            if w.requires_grad:
                w.accumulate(x.value.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]))

        return self._out(out, [x, w], back)

    def add(self, a: Node, b: Node):
        def back(g):
            if a.requires_grad:
                a.accumulate(g)
            if b.requires_grad:
                b.accumulate(g)

        return self._out(a.value + b.value, [a, b], back)

    def scale(self, a: Node, c: float):
        c = float(c)

        def back(g):
            if a.requires_grad:
                a.accumulate(c * g)

        return self._out(c * a.value, [a], back)

    def rmsnorm(self, x: Node):
        """Parameter-free RMS normalisation over the last axis."""
        ms = np.mean(x.value * x.value, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(ms + NORM_EPS)
        y = x.value * inv
        n = x.shape[-1]

        def back(g):
            if x.requires_grad:
                dot = np.sum(g * x.value, axis=-1, keepdims=True)
                x.accumulate(inv * g - (inv**3) * x.value * dot / n)

        return self._out(y, [x], back)

    def gelu(self, x: Node):
        """tanh-approximate GELU."""
        u = x.value
        u2 = u * u
        inner = _GELU_C * u * (1.0 + _GELU_A * u2)
        t = np.tanh(inner)
        y = 0.5 * u * (1.0 + t)

        def back(g):
            if x.requires_grad:
                dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * u2)
                x.accumulate(g * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner))

        return self._out(y, [x], back)

    def gqa_attention(self, q: Node, k: Node, v: Node, n_heads: int, kv_heads: int, logit_scale: float):
        """Causal attention with ``kv_heads`` key/value heads shared by ``n_heads`` queries.

        ``q`` is (B, T, n); ``k`` and ``v`` are (B, T, n/r) with ``r = n_heads / kv_heads``.
        Query head ``h`` reads key/value head ``h mod kv_heads``, which is the
        head layout of the row-stacked matrix ``[W_k; W_k; ...; W_k]``.
        """
        B, T, n = q.shape
        p = kv_heads
        r = n_heads // kv_heads
        d = n // n_heads
        qh = q.value.reshape(B, T, r, p, d).transpose(0, 3, 2, 1, 4)  # B p r T d
        kh = k.value.reshape(B, T, p, d).transpose(0, 2, 1, 3)[:, :, None]  # B p 1 T d
        vh = v.value.reshape(B, T, p, d).transpose(0, 2, 1, 3)[:, :, None]
        s = (qh @ kh.swapaxes(-1, -2)) * logit_scale
        mask = np.triu(np.ones((T, T), dtype=bool), 1)
        s = np.where(mask, -np.inf, s)
        s -= s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        oh = a @ vh  # B p r T d
        out = oh.transpose(0, 3, 2, 1, 4).reshape(B, T, n)

        def back(g):
            go = g.reshape(B, T, r, p, d).transpose(0, 3, 2, 1, 4)
            if v.requires_grad:
                gv = (a.swapaxes(-1, -2) @ go).sum(axis=2)  # B p T d
                v.accumulate(gv.transpose(0, 2, 1, 3).reshape(B, T, p * d))
            if q.requires_grad or k.requires_grad:
                ga = go @ vh.swapaxes(-1, -2)
                gs = a * (ga - np.sum(ga * a, axis=-1, keepdims=True)) * logit_scale
                if q.requires_grad:
                    gq = gs @ kh
                    q.accumulate(gq.transpose(0, 3, 2, 1, 4).reshape(B, T, n))
                if k.requires_grad:
                    gk = (gs.swapaxes(-1, -2) @ qh).sum(axis=2)
                    k.accumulate(gk.transpose(0, 2, 1, 3).reshape(B, T, p * d))

        return self._out(out, [q, k, v], back)

    def cross_entropy(self, logits: Node, targets):
        """Mean next-token cross-entropy; returns a scalar node."""
        targets = np.asarray(targets)
        z = logits.value - logits.value.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        flat = logp.reshape(-1, logp.shape[-1])
        idx = targets.reshape(-1)
        count = idx.size
        loss = -flat[np.arange(count), idx].mean()

        def back(g):
            if logits.requires_grad:
                probs = np.exp(flat)
                probs[np.arange(count), idx] -= 1.0
                logits.accumulate((float(g) / count) * probs.reshape(logits.shape))

        return self._out(np.asarray(loss), [logits], back)
