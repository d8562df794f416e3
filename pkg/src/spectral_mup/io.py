"""CSV schemas, run manifests, corpora and config files."""

from __future__ import annotations

import configparser
import csv
import datetime as _dt
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ContractViolation
from .linalg import RngStream

SEPARATOR = 256  # document separator id for byte-level corpora

SCHEMAS = {
    "coordcheck": ("seed", "step", "layer", "role", "scale_var", "scale_value", "quantity", "value"),
    "normexp": ("r", "n", "spectral", "expected", "expected_stderr", "expected_sd", "bai_yin"),
    "depthexp": ("L", "beta", "gain", "gain_sd"),
    "sweep": ("trial", "scale", "lr", "wd", "seed", "final_loss", "tau_epoch", "diverged"),
}

_INT_COLS = {"seed", "step", "layer", "scale_value", "r", "n", "L", "trial"}
_BOOL_COLS = {"diverged"}


class SchemaError(ContractViolation):
    pass


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)  # shortest round-tripping decimal
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def _as_row(rec, columns):
    if isinstance(rec, dict):
        return [rec[c] for c in columns]
    return [getattr(rec, c) for c in columns]


def write_csv(records, schema: str, path) -> int:
    """Write ``records`` (dataclasses or dicts) under a fixed header; returns row count.

    ``path`` may also be an open text stream.
    """
    if schema not in SCHEMAS:
        raise SchemaError(f"unknown schema {schema!r}")
    cols = SCHEMAS[schema]
    if hasattr(path, "write"):
        return _write_rows(path, records, cols)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        return _write_rows(fh, records, cols)


def _write_rows(fh, records, cols) -> int:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    count = 0
    for rec in records:
        w.writerow([_fmt(v) for v in _as_row(rec, cols)])
        count += 1
    return count


def _parse(col, text, lineno):
    try:
        if col in _BOOL_COLS:
            if text not in ("0", "1"):
                raise ValueError(text)
            return text == "1"
        if col in _INT_COLS:
            return int(text)
        if col in ("role", "scale_var", "quantity", "scale"):
            return text
        return float(text)
    except ValueError:
        raise SchemaError(f"line {lineno}: bad value {text!r} in column {col!r}") from None


def read_csv(path, schema: str) -> list:
    """Read a CSV written by :func:`write_csv`; rows come back as dicts."""
    if schema not in SCHEMAS:
        raise SchemaError(f"unknown schema {schema!r}")
    cols = SCHEMAS[schema]
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected header {','.join(cols)}")
        for i, (got, want) in enumerate(zip(header, cols)):
            if got != want:
                raise SchemaError(f"{path}: column {i} is {got!r}, expected {want!r}")
        if len(header) != len(cols):
            extra = header[len(cols):] or cols[len(header):]
            raise SchemaError(f"{path}: header mismatch at column {extra[0]!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(cols):
                raise SchemaError(f"{path}: line {lineno}: expected {len(cols)} fields, got {len(row)}")
            rows.append({c: _parse(c, v, lineno) for c, v in zip(cols, row)})
    return rows


def coord_records_from_rows(rows):
    from .harness.coordcheck import CoordCheckRecord, Quantity, ScaleVar
    from .parameterization import Role

    return [
        CoordCheckRecord(
            r["seed"], r["step"], r["layer"], Role(r["role"]), ScaleVar(r["scale_var"]),
            r["scale_value"], Quantity(r["quantity"]), r["value"],
        )
        for r in rows
    ]


# -- manifests ---------------------------------------------------------------


def write_manifest(directory, command: str, config: dict, seed=None, outputs=(), argv=None) -> Path:
    """Write ``manifest.json`` into ``directory`` before any work starts."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": "spectral-mup",
        "version": __version__,
        "command": command,
        "argv": list(sys.argv if argv is None else argv),
        "master_seed": seed,
        "config": config,
        "outputs": [str(o) for o in outputs],
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "numpy": np.__version__,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    return path


def read_manifest(directory_or_file) -> dict:
    p = Path(directory_or_file)
    if p.is_dir():
        p = p / "manifest.json"
    return json.loads(p.read_text())


def _json_default(o):
    if hasattr(o, "value"):
        return o.value
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def dump_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default))


# -- corpora -----------------------------------------------------------------


@dataclass
class Corpus:
    """A token stream with deterministic, epoch-reshuffled batching.

    ``kind`` is ``"file"`` (bytes of a text file, documents separated by a
    blank line and delimited with token 256), ``"uniform"`` (i.i.d. uniform
    tokens) or ``"markov"`` (a seeded sparse first-order Markov chain, which
    unlike uniform noise has learnable structure).
    """

    tokens: np.ndarray
    vocab: int
    seed: int
    kind: str

    def __len__(self):
        return len(self.tokens)

    def batches(self, batch_seqs: int, seq_len: int):
        """Yield ``(batch_seqs, seq_len + 1)`` blocks forever.

        Blocks are non-overlapping windows drawn without replacement; after
        each pass the order is reshuffled with the next epoch's seed.
        """
        span = seq_len + 1
        n_blocks = len(self.tokens) // span
        if n_blocks < batch_seqs:
            raise ContractViolation(
                f"corpus of {len(self.tokens)} tokens too small for {batch_seqs}x{span} batches"
            )
        blocks = self.tokens[: n_blocks * span].reshape(n_blocks, span)
        epoch = 0
        while True:
            order = RngStream(self.seed, 0xC0FFEE).child(epoch).permutation(n_blocks)
            for i in range(0, n_blocks - batch_seqs + 1, batch_seqs):
                yield blocks[order[i : i + batch_seqs]]
            epoch += 1


def load_corpus(source, seed: int = 0, *, vocab: int = 256, length: int = 1 << 16, kind=None) -> Corpus:
    """Build a :class:`Corpus` from a file path or a synthetic spec.

    Parameters
    ----------
    source : str or Path or dict
        A path to a text file, or ``{"kind": "uniform"|"markov", "vocab": int,
        "length": int}`` (also ``"synthetic:uniform"`` / ``"synthetic:markov"``).
    seed : int
    """
    if isinstance(source, str) and source.startswith("synthetic"):
        _, _, k = source.partition(":")
        source = {"kind": k or "uniform"}
    if isinstance(source, dict):
        k = source.get("kind", kind or "uniform")
        v = int(source.get("vocab", vocab))
        n = int(source.get("length", length))
        rng = RngStream(seed, 0xDA7A)
        if k == "uniform":
            toks = rng.integers(0, v, size=n)
        elif k == "markov":
            toks = _markov_tokens(rng, v, n, int(source.get("branching", 4)))
        else:
            raise ContractViolation(f"unknown synthetic corpus kind {k!r}")
        return Corpus(np.asarray(toks, dtype=np.int64), v, seed, k)

    path = Path(source)
    data = path.read_bytes()
    if not data:
        raise ContractViolation(f"corpus file {path} is empty")
    docs = [d for d in data.split(b"\n\n") if d]
    out = []
    for d in docs:
        out.extend(d)
        out.append(SEPARATOR)
    return Corpus(np.asarray(out, dtype=np.int64), 257, seed, "file")


def _markov_tokens(rng: RngStream, vocab: int, length: int, branching: int) -> np.ndarray:
    gen = rng.child(1).generator
    succ = np.stack([gen.choice(vocab, size=branching, replace=False) for _ in range(vocab)])
    probs = gen.dirichlet(np.ones(branching), size=vocab)
    cum = np.cumsum(probs, axis=1)
    u = rng.child(2).generator.random(length)
    toks = np.empty(length, dtype=np.int64)
    cur = int(rng.child(3).integers(0, vocab))
    for i in range(length):
        toks[i] = cur
        j = min(int(np.searchsorted(cum[cur], u[i], side="right")), branching - 1)
        cur = int(succ[cur, j])
    return toks


# -- config files --------------------------------------------------------------


def read_config(path) -> dict:
    """Flat ``key = value`` config with ``[sections]``; returns ``{section: {key: value}}``.

    Values are parsed as JSON when possible (numbers, lists, booleans) and kept
    as strings otherwise.
    """
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    out = {}
    for section in cp.sections():
        out[section] = {k: _coerce(v) for k, v in cp.items(section)}
    return out


def _coerce(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def worker_count(default: int = 1) -> int:
    """Worker pool size from ``SPECTRAL_MUP_WORKERS``."""
    try:
        return max(1, int(os.environ.get("SPECTRAL_MUP_WORKERS", default)))
    except ValueError:
        return default
