"""scikit-learn compatible wrapper around the GQA transformer language model."""

from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ContractViolation
from .io import Corpus
from .linalg import RngStream
from .model import ModelConfig, forward, init_params, loss_and_backward, loss_only
from .optim import AdamW, Schedule, schedule_multiplier, warmup_steps
from .parameterization import Parameterization

logger = logging.getLogger(__name__)


def check_tokens(X, vocab=None, min_length=1, name="X"):
    """Validate a 2-D array of token ids (one sequence per row)."""
    X = check_array(X, dtype=np.int64, ensure_2d=True, input_name=name)
    if X.shape[1] < min_length:
        raise ValueError(f"{name} needs at least {min_length} tokens per row, got {X.shape[1]}")
    if X.min() < 0 or (vocab is not None and X.max() >= vocab):
        raise ValueError(f"{name} has token ids outside [0, {vocab})")
    return X


class GQATransformerLM(BaseEstimator):
    """Next-token language model with grouped-query attention and muP-style scaling.

    Parameters
    ----------
    n_embd, n_layer, n_head, n_kv_head : int
        Width, depth, query heads and key/value heads (``n_head % n_kv_head == 0``).
    vocab_size, seq_len : int
    parameterization : {"sp", "adam-mup", "gqa-mup"}
    lr, weight_decay, init_std, eps : float
        Base hyperparameters, rescaled per role by the parameterization.
    wd_mode : {"coupled", "decoupled"}
    beta_mode : {"complete-p", "constant"}
    base_beta : float
    eps_scaling : bool
        Scale Adam epsilon as ``eps / n`` for matrix-like roles.
    batch_size : int
        Sequences per optimizer step.
    max_steps : int
    warmup : int or "auto"
        ``"auto"`` uses ``min(int(0.02 * steps), int(375e6 / (B * L)))``.
    betas : tuple of float
    clip : float
        Global gradient-norm clip, 0 to disable.
    random_state : int

    Attributes
    ----------
    config_ : ModelConfig
    params_ : TransformerParams
    loss_curve_ : list of float
    n_iter_ : int
    diverged_ : bool
    """

    def __init__(
        self,
        n_embd=64,
        n_layer=2,
        n_head=4,
        n_kv_head=4,
        vocab_size=256,
        seq_len=64,
        parameterization="gqa-mup",
        lr=2.0**-6,
        weight_decay=0.0,
        init_std=1.0,
        eps=1e-9,
        wd_mode="coupled",
        beta_mode="complete-p",
        base_beta=1.0,
        eps_scaling=True,
        batch_size=8,
        max_steps=100,
        warmup="auto",
        betas=(0.9, 0.95),
        clip=0.0,
        random_state=0,
    ):
        self.n_embd = n_embd
        self.n_layer = n_layer
        self.n_head = n_head
        self.n_kv_head = n_kv_head
        self.vocab_size = vocab_size
        self.seq_len = seq_len
        self.parameterization = parameterization
        self.lr = lr
        self.weight_decay = weight_decay
        self.init_std = init_std
        self.eps = eps
        self.wd_mode = wd_mode
        self.beta_mode = beta_mode
        self.base_beta = base_beta
        self.eps_scaling = eps_scaling
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.warmup = warmup
        self.betas = betas
        self.clip = clip
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg: ModelConfig, **overrides) -> "GQATransformerLM":
        """Estimator whose architecture and base hyperparameters match ``cfg``."""
        p = cfg.param
        kw = dict(
            n_embd=cfg.n,
            n_layer=cfg.L,
            n_head=cfg.H,
            n_kv_head=cfg.kv_heads,
            vocab_size=cfg.vocab,
            seq_len=cfg.seq_len,
            parameterization=p.kind.value,
            lr=p.base_lr,
            weight_decay=p.base_wd,
            init_std=p.base_std,
            eps=p.base_eps,
            wd_mode=p.wd_mode.value,
            beta_mode=p.beta_mode.value,
            base_beta=p.base_beta,
            eps_scaling=p.eps_scaling,
        )
        kw.update(overrides)
        return cls(**kw)

    def build_config(self) -> ModelConfig:
        param = Parameterization(
            kind=self.parameterization,
            base_lr=self.lr,
            base_wd=self.weight_decay,
            base_std=self.init_std,
            base_eps=self.eps,
            wd_mode=self.wd_mode,
            beta_mode=self.beta_mode,
            base_beta=self.base_beta,
            eps_scaling=self.eps_scaling,
        )
        return ModelConfig(
            n=self.n_embd,
            L=self.n_layer,
            H=self.n_head,
            kv_heads=self.n_kv_head,
            vocab=self.vocab_size,
            seq_len=self.seq_len,
            param=param,
        )

    def _batches(self, X):
        if isinstance(X, Corpus):
            yield from X.batches(self.batch_size, self.seq_len)
            return
        X = check_tokens(X, self.vocab_size, min_length=2)
        if X.shape[1] > self.seq_len + 1:
            raise ValueError(f"rows have {X.shape[1]} tokens, at most seq_len + 1 = {self.seq_len + 1}")
        bs = min(self.batch_size, len(X))
        epoch = 0
        while True:
            order = RngStream(self.random_state, 0xBA7C).child(epoch).permutation(len(X))
            for i in range(0, len(X) - bs + 1, bs):
                yield X[order[i : i + bs]]
            epoch += 1

    def warmup_steps_(self) -> int:
        if self.warmup == "auto":
            return warmup_steps(self.max_steps, self.batch_size, self.seq_len)
        return int(self.warmup)

    def fit(self, X, y=None):
        """Train for ``max_steps`` AdamW steps.

        Parameters
        ----------
        X : array-like of shape (n_sequences, seq_len + 1) or Corpus
            Token blocks; each row supplies inputs ``row[:-1]`` and targets ``row[1:]``.
        y : ignored
        """
        if self.max_steps < 1:
            raise ContractViolation("max_steps must be >= 1")
        cfg = self.build_config()
        self.config_ = cfg
        self.params_ = init_params(cfg, RngStream(self.random_state, 1))
        opt = AdamW(self.params_.groups, cfg.param.wd_mode, self.betas, self.clip)
        sched = Schedule(min(self.warmup_steps_(), self.max_steps), self.max_steps)
        self.loss_curve_ = []
        self.diverged_ = False
        batches = self._batches(X)
        for step in range(1, self.max_steps + 1):
            batch = next(batches)
            loss = loss_and_backward(self.params_, cfg, batch)
            self.loss_curve_.append(loss)
            if not math.isfinite(loss) or loss > 1e3:
                logger.info("diverged at step %d (loss %s)", step, loss)
                self.diverged_ = True
                break
            opt.step(self.params_.values, self.params_.grads, schedule_multiplier(sched, step))
        self.n_iter_ = len(self.loss_curve_)
        self.optimizer_ = opt
        return self

    def loss(self, X) -> float:
        """Mean next-token cross-entropy over token blocks ``X``."""
        check_is_fitted(self, "params_")
        X = check_tokens(X, self.vocab_size, min_length=2)
        return loss_only(self.params_, self.config_, X)

    def score(self, X, y=None) -> float:
        """Negative mean cross-entropy (higher is better)."""
        return -self.loss(X)

    def predict_proba(self, X):
        """Next-token distribution after each row of ``X``, shape (n_rows, vocab)."""
        check_is_fitted(self, "params_")
        X = check_tokens(X, self.vocab_size)
        logits, _ = forward(self.params_, self.config_, X[:, -self.seq_len :])
        z = logits[:, -1, :]
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)
