"""Command-line entry point: ``spectral-mup <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ContractViolation

logger = logging.getLogger("spectral_mup")


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _log2_grid(text):
    """``"-11:2"`` for powers of two with those exponents, or a comma list of values."""
    text = str(text)
    if ":" in text:
        lo, hi = (int(x) for x in text.split(":"))
        return [2.0**k for k in range(lo, hi + 1)]
    return _floats(text)


def _seeds(text):
    """``"3"`` means seeds 1..3; a comma list is taken literally."""
    vals = _ints(text)
    return list(range(1, vals[0] + 1)) if len(vals) == 1 and "," not in str(text) else vals


def _model_flags(p, *, n=64, L=2, H=4, kv=None, vocab=256, seq=64, lr=2.0**-6, eps=1e-9):
    g = p.add_argument_group("model")
    g.add_argument("--param", default="gqa-mup", choices=["sp", "adam-mup", "gqa-mup"])
    g.add_argument("--n", type=int, default=n, help="width")
    g.add_argument("--L", type=int, default=L, help="depth")
    g.add_argument("--H", type=int, default=H, help="query heads")
    g.add_argument("--kv-heads", type=int, default=kv, help="key/value heads (default H)")
    g.add_argument("--vocab", type=int, default=vocab)
    g.add_argument("--seq-len", type=int, default=seq)
    g.add_argument("--lr", type=float, default=lr, help="base learning rate")
    g.add_argument("--wd", type=float, default=0.0, help="base weight decay")
    g.add_argument("--std", type=float, default=1.0, help="base init std")
    g.add_argument("--eps", type=float, default=eps, help="base Adam epsilon")
    g.add_argument("--no-eps-scaling", action="store_true")
    g.add_argument("--wd-mode", default="coupled", choices=["coupled", "decoupled"])
    g.add_argument("--beta-mode", default="complete-p", choices=["complete-p", "constant"])
    g.add_argument("--beta", type=float, default=1.0)


def _config_from(a):
    from .model import ModelConfig
    from .parameterization import Parameterization

    param = Parameterization(
        kind=a.param, base_lr=a.lr, base_wd=a.wd, base_std=a.std, base_eps=a.eps,
        wd_mode=a.wd_mode, beta_mode=a.beta_mode, base_beta=a.beta, eps_scaling=not a.no_eps_scaling,
    )
    return ModelConfig(n=a.n, L=a.L, H=a.H, kv_heads=a.kv_heads or a.H, vocab=a.vocab,
                       seq_len=a.seq_len, param=param)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spectral-mup", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--config", help="INI file; the section named after the subcommand supplies defaults")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cchk", help="coordinate check over width, repetitions or depth")
    _model_flags(p, n=576, L=8, H=12, seq=128, lr=0.5, eps=1e-12)
    p.add_argument("--scale", default="reps", choices=["width", "reps", "depth"])
    p.add_argument("--points", type=_ints, default=[1, 2, 3, 4, 6, 12])
    p.add_argument("--seeds", type=_seeds, default=list(range(1, 11)), help="count, or comma list")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--roles", default="", help="comma list of roles (default all)")
    p.add_argument("--exp-samples", type=int, default=250)
    p.add_argument("--norm-method", default="svd", choices=["svd", "power"])
    p.add_argument("--kv-view", default="mixed", choices=["mixed", "stored", "replicated"])
    p.add_argument("--tolerance", type=float, default=0.15)
    p.add_argument("--out", default="runs/cchk")

    p = sub.add_parser("norms", help="spectral vs expected norm of replicated matrices")
    p.add_argument("--n", type=int, default=1152)
    p.add_argument("--reps", type=_ints, default=[1, 2, 3, 4, 6, 12])
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--std-rule", default="1/sqrt(n)")
    p.add_argument("--draws", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/norms")

    p = sub.add_parser("depth", help="forward gain of frozen residual stacks")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--depths", type=_ints, default=[2, 4, 8, 16, 32, 64])
    p.add_argument("--beta-mode", default="complete-p", choices=["complete-p", "constant"])
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--probes", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/depth")

    p = sub.add_parser("sweep", help="learning rate by weight decay grid over model scales")
    _model_flags(p, vocab=64, seq=32)
    p.add_argument("--widths", type=_ints, default=[64, 128, 256])
    p.add_argument("--reps", type=_ints, default=[1], help="r values; each width is run at each r")
    p.add_argument("--lr-grid", type=_log2_grid, default=_log2_grid("-11:2"))
    p.add_argument("--wd-grid", type=_log2_grid, default=[2.0**-8, 2.0**-4])
    p.add_argument("--trials", type=int, default=1, help="seeds per grid point")
    p.add_argument("--tpp", type=float, default=0.02)
    p.add_argument("--min-tokens", type=int, default=51200)
    p.add_argument("--max-tokens", type=int, default=2_000_000)
    p.add_argument("--batch-scale", type=float, default=64.0)
    p.add_argument("--corpus", default="synthetic:markov")
    p.add_argument("--corpus-length", type=int, default=1 << 18)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--rerun", type=int, default=None, metavar="TRIAL",
                   help="replay one trial from the trials.json in --out and print its loss")
    p.add_argument("--out", default="runs/sweep")

    p = sub.add_parser("train", help="train one model with periodic loss logging")
    _model_flags(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--warmup", default="auto")
    p.add_argument("--corpus", default="synthetic:markov", help="text file or synthetic:uniform|markov")
    p.add_argument("--corpus-length", type=int, default=1 << 18)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--checkpoint", default=None, help="write a checkpoint here at the end")
    p.add_argument("--out", default="runs/train")

    p = sub.add_parser("plot", help="render CSV outputs as SVG")
    p.add_argument("csv", nargs="+")
    p.add_argument("--schema", default=None, help="inferred from the header when omitted")
    p.add_argument("--out", default=None, help="output directory (default next to each CSV)")

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--only", type=_ints, default=None, help="comma list of criterion numbers")
    p.add_argument("--json", default=None, help="write results here")
    return ap


def parse_args(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        from .io import read_config

        try:
            section = read_config(args.config).get(args.command, {})
        except (OSError, ValueError) as exc:
            ap.error(f"cannot read config {args.config}: {exc}")
        sub = ap._subparsers._group_actions[0].choices[args.command]
        dests = {a.dest: a for a in sub._actions}
        for key, value in section.items():
            dest = key.replace("-", "_")
            if dest not in dests:
                ap.error(f"unknown key {key!r} in [{args.command}] of {args.config}")
            action = dests[dest]
            if action.type is not None and isinstance(value, (str, int, float)):
                value = action.type(str(value))
            sub.set_defaults(**{dest: value})
        args = ap.parse_args(argv)
    return args


def cli_main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _role_table(cfg):
    from .model import resolve_groups

    out = {}
    for g in resolve_groups(cfg).values():
        out.setdefault(g.role.value, g.to_dict())
    return out


def _vars(args):
    return {k: v for k, v in vars(args).items() if k not in ("verbose",)}


def cmd_cchk(args, argv):
    from .harness.coordcheck import run_coord_check, verdict_from_records
    from .io import dump_json, write_csv, write_manifest

    cfg = _config_from(args)
    out = Path(args.out)
    roles = [r for r in args.roles.split(",") if r] or None
    scale = {"width": "Width", "reps": "Reps", "depth": "Depth"}[args.scale]
    write_manifest(out, "cchk", {"args": _vars(args), "model": cfg.to_dict(), "groups": _role_table(cfg)},
                   seed=args.seeds, outputs=[out / "records.csv", out / "verdicts.json"], argv=argv)
    records = list(run_coord_check(cfg, scale, args.points, args.seeds, args.steps, batch=args.batch,
                                   roles=roles, exp_samples=args.exp_samples, norm_method=args.norm_method,
                                   kv_view=args.kv_view))
    write_csv(records, "coordcheck", out / "records.csv")
    verdicts = verdict_from_records(records, tolerance=args.tolerance)
    dump_json([v.to_dict() for v in verdicts], out / "verdicts.json")
    for v in verdicts:
        print(f"{v.quantity.value:7s} {v.role.value:12s} slope {v.measured_slope:+.3f} "
              f"(expect {v.expected_exponent:+.2f}) {'pass' if v.passed else 'FAIL'}")
    return 0


def cmd_norms(args, argv):
    from .harness.experiments import ratio_monotone, run_norm_experiment
    from .io import write_csv, write_manifest

    out = Path(args.out)
    write_manifest(out, "norms", {"args": _vars(args)}, seed=args.seed, outputs=[out / "normexp.csv"], argv=argv)
    rows = run_norm_experiment(args.n, args.reps, args.std_rule, args.samples, seed=args.seed, draws=args.draws)
    write_csv(rows, "normexp", out / "normexp.csv")
    for row in rows:
        print(f"r={row.r:3d} spectral={row.spectral:.4f} expected={row.expected:.4f}"
              f"+-{row.expected_stderr:.4f} bai_yin={row.bai_yin:.4f}")
    print(f"ratio monotone: {ratio_monotone(rows)}")
    return 0


def cmd_depth(args, argv):
    from .harness.experiments import run_depth_experiment
    from .io import write_csv, write_manifest

    out = Path(args.out)
    write_manifest(out, "depth", {"args": _vars(args)}, seed=args.seed, outputs=[out / "depthexp.csv"], argv=argv)
    rows = run_depth_experiment(args.n, args.depths, args.beta_mode, args.beta, seed=args.seed, probes=args.probes)
    write_csv(rows, "depthexp", out / "depthexp.csv")
    for row in rows:
        print(f"L={row.L:3d} beta={row.beta:.4g} gain={row.gain:.4f}")
    return 0


def cmd_sweep(args, argv):
    from .harness.sweep import plan_sweep, run_sweep, run_trial
    from .io import dump_json, write_csv, write_manifest

    out = Path(args.out)
    if args.rerun is not None:
        specs = json.loads((out / "trials.json").read_text())
        match = [s for s in specs if s["trial"] == args.rerun]
        if not match:
            raise ContractViolation(f"no trial {args.rerun} in {out / 'trials.json'}")
        res = run_trial(match[0])
        print(json.dumps(res.row()))
        return 0
    base = _config_from(args)
    scales, labels = [], []
    for n in args.widths:
        for r in args.reps:
            if base.H % r:
                raise ContractViolation(f"r={r} does not divide H={base.H}")
            scales.append(base.replace(n=n, kv_heads=base.H // r))
            labels.append(f"{args.param}-n{n}-r{r}")
    corpus = _corpus_spec(args.corpus, args.vocab, args.corpus_length)
    kw = dict(corpus=corpus, labels=labels, min_tokens=args.min_tokens, max_tokens=args.max_tokens,
              batch_scale=args.batch_scale)
    specs = plan_sweep(scales, args.lr_grid, args.wd_grid, args.trials, args.tpp, **kw)
    write_manifest(out, "sweep", {"args": _vars(args), "scales": [c.to_dict() for c in scales]},
                   seed=0, outputs=[out / "sweep.csv", out / "summary.json", out / "trials.json"], argv=argv)
    dump_json(specs, out / "trials.json")
    results, summary = run_sweep(scales, args.lr_grid, args.wd_grid, args.trials, args.tpp, n_jobs=args.jobs, **kw)
    write_csv([r.row() for r in results], "sweep", out / "sweep.csv")
    dump_json(summary.to_dict(), out / "summary.json")
    for o in summary.optima:
        print(f"{o.scale:24s} lr*={o.lr:.4g} wd*={o.wd:.4g} tau*={o.tau_epoch:.4g} loss={o.loss:.4f} "
              f"diverged={o.diverged}/{o.trials}")
    print(f"Var(log2 lr*)={summary.var_log2_lr:.4g} Var(log2 tau*)={summary.var_log2_tau:.4g} "
          f"Var(loss*)={summary.var_loss:.4g}")
    return 0


def _corpus_spec(text, vocab, length):
    if text.startswith("synthetic"):
        _, _, kind = text.partition(":")
        return {"kind": kind or "uniform", "vocab": vocab, "length": length}
    return text


def cmd_train(args, argv):
    from .estimator import GQATransformerLM
    from .io import load_corpus, write_manifest
    from .model import save_checkpoint

    cfg = _config_from(args)
    spec = _corpus_spec(args.corpus, args.vocab, args.corpus_length)
    corpus = load_corpus(spec, seed=args.seed)
    if corpus.vocab > cfg.vocab:
        raise ContractViolation(f"corpus vocab {corpus.vocab} exceeds model vocab {cfg.vocab}; pass --vocab")
    est = GQATransformerLM.from_config(cfg, batch_size=args.batch, max_steps=args.steps, random_state=args.seed,
                                       warmup=args.warmup)
    out = Path(args.out)
    write_manifest(out, "train", {"args": _vars(args), "model": cfg.to_dict(), "groups": _role_table(cfg),
                                  "estimator": est.get_params(), "corpus": spec},
                   seed=args.seed, outputs=[out / "loss.csv"] + ([args.checkpoint] if args.checkpoint else []),
                   argv=argv)
    t0 = time.perf_counter()
    est.fit(corpus)
    with (out / "loss.csv").open("w") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(est.loss_curve_, start=1):
            fh.write(f"{i},{loss!r}\n")
            if i % args.log_every == 0 or i == len(est.loss_curve_):
                print(f"step {i:5d} loss {loss:.4f}")
    print(f"{est.n_iter_} steps in {time.perf_counter() - t0:.1f}s" + (" (diverged)" if est.diverged_ else ""))
    if args.checkpoint:
        save_checkpoint(args.checkpoint, est.params_, cfg, est.optimizer_, step=est.n_iter_)
    return 1 if est.diverged_ else 0


def cmd_plot(args, argv):
    from .io import SCHEMAS
    from .plot import render

    for path in args.csv:
        schema = args.schema
        if schema is None:
            header = tuple(Path(path).read_text().split("\n", 1)[0].split(","))
            schema = next((k for k, v in SCHEMAS.items() if v == header), None)
            if schema is None:
                raise ContractViolation(f"{path}: header matches no known schema")
        for p in render(path, schema, args.out or Path(path).parent):
            print(p)
    return 0


def cmd_verify(args, argv):
    from .acceptance import CRITERIA, run_all
    from .io import dump_json

    if args.only and any(i not in CRITERIA for i in args.only):
        raise ContractViolation(f"criteria are numbered 1..{len(CRITERIA)}")
    results = run_all(args.only)
    for r in results:
        print(r.line())
    if args.json:
        dump_json([r.to_dict() for r in results], args.json)
    failed = [r.number for r in results if not r.passed]
    if failed:
        print("failed criteria: " + ", ".join(str(i) for i in failed))
        return 1
    return 0


COMMANDS = {
    "cchk": cmd_cchk,
    "norms": cmd_norms,
    "depth": cmd_depth,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "plot": cmd_plot,
    "verify": cmd_verify,
}


def main():  # console-script entry point
    sys.exit(cli_main())
