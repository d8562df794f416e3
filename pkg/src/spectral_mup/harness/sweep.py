"""Learning-rate by weight-decay grid sweeps and their transfer statistics."""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed

from ..estimator import GQATransformerLM
from ..exceptions import ContractViolation
from ..io import load_corpus, worker_count
from ..model import ModelConfig, param_layout
from ..parameterization import HIDDEN_ROLES, tau_epoch
from .experiments import batch_size_tokens

logger = logging.getLogger(__name__)

DEFAULT_CORPUS = {"kind": "markov", "vocab": 64, "length": 1 << 18}
HOLDOUT_BLOCKS = 64


@dataclass(frozen=True)
class SweepResult:
    """One trial of a sweep.

    ``final_loss`` is the held-out cross-entropy after training; it is NaN
    only when ``diverged`` is set.
    """

    trial: int
    scale: str
    lr: float
    wd: float
    seed: int
    final_loss: float
    tau_epoch: float
    diverged: bool
    steps: int = field(default=0, compare=False)
    spec: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.diverged and not math.isfinite(self.final_loss):
            raise ContractViolation(f"trial {self.trial}: non-finite loss without divergence flag")

    def row(self) -> dict:
        d = asdict(self)
        d.pop("spec")
        d.pop("steps")
        return d


@dataclass
class ScaleOptimum:
    scale: str
    lr: float
    wd: float
    tau_epoch: float
    loss: float
    diverged: int
    trials: int


@dataclass
class SweepSummary:
    """Per-scale optima and across-scale variances (population, log2 for lr, wd, tau)."""

    optima: list
    var_log2_lr: float
    var_log2_wd: float
    var_log2_tau: float
    var_loss: float
    diverged: int

    def to_dict(self) -> dict:
        return {
            "optima": [asdict(o) for o in self.optima],
            "var_log2_lr": self.var_log2_lr,
            "var_log2_wd": self.var_log2_wd,
            "var_log2_tau": self.var_log2_tau,
            "var_loss": self.var_loss,
            "diverged": self.diverged,
        }


def non_embedding_params(cfg: ModelConfig) -> int:
    """Parameter count of the hidden (non-embedding, non-unembedding) matrices."""
    return sum(a * b for _, role, (a, b) in param_layout(cfg) if role in HIDDEN_ROLES)


def trial_budget(cfg: ModelConfig, tpp: float, *, min_tokens=0, max_tokens=2_000_000, batch_scale=1.0):
    """Tokens, batch sequences and steps for one trial.

    The batch size follows ``batch_size_tokens`` times ``batch_scale``,
    rounded up to whole sequences of ``cfg.seq_len``.
    """
    if not tpp > 0:
        raise ContractViolation("tpp must be positive")
    tokens = int(min(max(tpp * non_embedding_params(cfg), min_tokens), max_tokens))
    batch = max(1, math.ceil(batch_scale * batch_size_tokens(tokens)))
    steps = max(1, math.ceil(tokens / (batch * cfg.seq_len)))
    return tokens, batch, steps


@functools.lru_cache(maxsize=4)
def _split_corpus(corpus_key, seq_len):
    spec = dict(corpus_key)
    seed = spec.pop("seed", 0)
    corpus = load_corpus(spec, seed=seed)
    span = seq_len + 1
    nb = len(corpus.tokens) // span
    if nb <= HOLDOUT_BLOCKS:
        raise ContractViolation("corpus too small for the held-out split")
    blocks = corpus.tokens[: nb * span].reshape(nb, span)
    return blocks[:-HOLDOUT_BLOCKS], blocks[-HOLDOUT_BLOCKS:]


def run_trial(spec: dict) -> SweepResult:
    """Train one trial from its recorded spec; deterministic in ``spec``."""
    est = GQATransformerLM(**spec["estimator"])
    train, valid = _split_corpus(tuple(sorted(spec["corpus"].items())), est.seq_len)
    if est.max_steps * est.batch_size > len(train):
        logger.debug("trial %s repeats training blocks", spec["trial"])
    est.fit(train)
    loss = math.nan if est.diverged_ else est.loss(valid)
    diverged = est.diverged_ or not math.isfinite(loss)
    tau = tau_epoch(est.weight_decay, est.lr, est.max_steps) if est.weight_decay > 0 else math.nan
    return SweepResult(
        trial=spec["trial"],
        scale=spec["scale"],
        lr=est.lr,
        wd=est.weight_decay,
        seed=est.random_state,
        final_loss=math.nan if diverged else loss,
        tau_epoch=tau,
        diverged=diverged,
        steps=est.max_steps,
        spec=spec,
    )


def _label(cfg: ModelConfig) -> str:
    return f"{cfg.param.kind.value}-n{cfg.n}-L{cfg.L}-r{cfg.r}"


def _check_log_grid(grid, name):
    g = np.asarray(grid, dtype=float)
    if g.size == 0 or np.any(g <= 0):
        raise ContractViolation(f"{name} grid must be nonempty and positive")
    if g.size > 2:
        steps = np.diff(np.log2(g))
        if not np.allclose(steps, steps[0], atol=1e-9):
            raise ContractViolation(f"{name} grid must be log-spaced")
    return [float(x) for x in g]


def plan_sweep(scales, lr_grid, wd_grid, trials=1, tpp=20.0, *, corpus=None, labels=None,
               min_tokens=0, max_tokens=2_000_000, batch_scale=1.0, base_seed=0):
    """Enumerate trial specs in trial-id order."""
    if trials < 1:
        raise ContractViolation("trials must be >= 1")
    lr_grid = _check_log_grid(lr_grid, "lr")
    wd_grid = _check_log_grid(wd_grid, "wd")
    corpus = dict(DEFAULT_CORPUS if corpus is None else corpus)
    labels = list(labels) if labels is not None else [_label(c) for c in scales]
    if len(labels) != len(scales):
        raise ContractViolation("labels and scales differ in length")
    specs = []
    for label, cfg in zip(labels, scales):
        if cfg.vocab < corpus.get("vocab", 256):
            raise ContractViolation(f"scale {label}: vocab {cfg.vocab} smaller than the corpus vocab")
        tokens, batch, steps = trial_budget(
            cfg, tpp, min_tokens=min_tokens, max_tokens=max_tokens, batch_scale=batch_scale
        )
        for lr in lr_grid:
            for wd in wd_grid:
                for s in range(trials):
                    est = GQATransformerLM.from_config(
                        cfg, lr=lr, weight_decay=wd, batch_size=batch, max_steps=steps,
                        random_state=base_seed + s,
                    )
                    specs.append({
                        "trial": len(specs),
                        "scale": label,
                        "tokens": tokens,
                        "corpus": corpus,
                        "estimator": est.get_params(),
                    })
    return specs


def run_sweep(scales, lr_grid, wd_grid, trials=1, tpp=20.0, *, n_jobs=None, **plan_kw):
    """Run the full grid and return ``(results, summary)``.

    Parameters
    ----------
    scales : list of ModelConfig
    lr_grid, wd_grid : sequence of float
        Log-spaced base learning rates and weight decays.
    trials : int
        Seeds per grid point.
    tpp : float
        Tokens per non-embedding parameter; see :func:`trial_budget`.
    n_jobs : int, optional
        Worker processes; defaults to :func:`worker_count`.
    """
    specs = plan_sweep(scales, lr_grid, wd_grid, trials, tpp, **plan_kw)
    n_jobs = worker_count() if n_jobs is None else n_jobs
    logger.info("sweep: %d trials on %d workers", len(specs), n_jobs)
    if n_jobs == 1:
        results = [run_trial(s) for s in specs]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(run_trial)(s) for s in specs)
    results = sorted(results, key=lambda r: r.trial)
    return results, summarize(results)


def scale_optimum(results, scale) -> ScaleOptimum:
    rs = [r for r in results if r.scale == scale]
    ok = [r for r in rs if not r.diverged]
    n_div = len(rs) - len(ok)
    if not ok:
        return ScaleOptimum(scale, math.nan, math.nan, math.nan, math.nan, n_div, len(rs))
    cells: dict = {}
    for r in ok:
        cells.setdefault((r.lr, r.wd), []).append(r)
    # a grid point counts only if none of its seeds diverged
    cells = {k: v for k, v in cells.items() if len(v) == sum(1 for r in rs if (r.lr, r.wd) == k)}
    if not cells:
        return ScaleOptimum(scale, math.nan, math.nan, math.nan, math.nan, n_div, len(rs))
    (lr, wd), best = min(cells.items(), key=lambda kv: float(np.mean([r.final_loss for r in kv[1]])))
    tau = float(np.mean([r.tau_epoch for r in best]))
    return ScaleOptimum(scale, lr, wd, tau, float(np.mean([r.final_loss for r in best])), n_div, len(rs))


def summarize(results) -> SweepSummary:
    """Per-scale argmin of mean held-out loss and across-scale variances."""
    scales = list(dict.fromkeys(r.scale for r in results))
    optima = [scale_optimum(results, s) for s in scales]

    def var(xs):
        xs = np.asarray(xs, dtype=float)
        return float(np.var(xs)) if xs.size and np.all(np.isfinite(xs)) else math.nan

    return SweepSummary(
        optima=optima,
        var_log2_lr=var([math.log2(o.lr) if o.lr > 0 else math.nan for o in optima]),
        var_log2_wd=var([math.log2(o.wd) if o.wd > 0 else math.nan for o in optima]),
        var_log2_tau=var([math.log2(o.tau_epoch) if o.tau_epoch > 0 else math.nan for o in optima]),
        var_loss=var([o.loss for o in optima]),
        diverged=sum(o.diverged for o in optima),
    )
