import numpy as np
import pytest

from spectral_mup.estimator import GQATransformerLM
from spectral_mup.exceptions import ContractViolation
from spectral_mup.model import load_checkpoint, save_checkpoint
from spectral_mup.model.checkpoint import MAGIC
from spectral_mup.optim import AdamW


@pytest.fixture
def trained():
    X = np.random.default_rng(0).integers(0, 11, (20, 9))
    return GQATransformerLM(n_embd=32, n_head=4, n_kv_head=2, vocab_size=11, seq_len=8, max_steps=3,
                            batch_size=4).fit(X)


def test_round_trip(tmp_path, trained):
    path = save_checkpoint(tmp_path / "m.ckpt", trained.params_, trained.config_, trained.optimizer_, step=3)
    assert path.read_bytes()[:8] == MAGIC
    cfg, params, opt, header = load_checkpoint(path)
    assert cfg == trained.config_ and header["step"] == 3
    for k, v in trained.params_.values.items():
        np.testing.assert_array_equal(params.values[k], v)
    assert header["groups"]["layers.0.k"]["role"] == "AttnKV"
    restored = AdamW(params.groups, cfg.param.wd_mode)
    restored.load_state(opt, header["optimizer"])
    for k, st in trained.optimizer_.states.items():
        np.testing.assert_array_equal(restored.states[k].m, st.m)
        assert restored.states[k].t == st.t


def test_without_optimizer(tmp_path, trained):
    save_checkpoint(tmp_path / "m.ckpt", trained.params_, trained.config_)
    _, _, opt, header = load_checkpoint(tmp_path / "m.ckpt")
    assert opt == {} and header["optimizer"] is None


def test_rejects_foreign_or_truncated_files(tmp_path, trained):
    bad = tmp_path / "x.bin"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(ContractViolation):
        load_checkpoint(bad)
    path = save_checkpoint(tmp_path / "m.ckpt", trained.params_, trained.config_)
    data = path.read_bytes()
    path.write_bytes(data[:-100])
    with pytest.raises(ContractViolation):
        load_checkpoint(path)
