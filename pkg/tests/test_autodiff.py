import numpy as np
import pytest

from spectral_mup.model import Tape

RNG = np.random.default_rng(0)


def check_op(build, shapes, h=1e-6, tol=1e-6):
    """Compare tape gradients of sum(out * R) against central differences."""
    values = [RNG.standard_normal(s) for s in shapes]

    def run(vals, grad=False):
        tape = Tape()
        leaves = [tape.leaf(v.copy()) for v in vals]
        out = build(tape, *leaves)
        return tape, leaves, out

    _, _, out = run(values)
    weight = RNG.standard_normal(np.shape(out.value))
    tape, leaves, out = run(values)
    tape.backward(out, weight)
    for i, leaf in enumerate(leaves):
        d = RNG.standard_normal(values[i].shape)
        plus = [v + h * d if j == i else v for j, v in enumerate(values)]
        minus = [v - h * d if j == i else v for j, v in enumerate(values)]
        fd = (np.sum(run(plus)[2].value * weight) - np.sum(run(minus)[2].value * weight)) / (2 * h)
        an = float(np.sum(leaf.grad * d))
        assert abs(fd - an) <= tol * max(1.0, abs(fd)), (i, fd, an)


def test_linear_and_project():
    check_op(lambda t, x, w: t.linear(x, w), [(2, 3, 4), (5, 4)])
    check_op(lambda t, x, w: t.project(x, w), [(2, 3, 4), (4, 5)])


def test_add_scale():
    check_op(lambda t, a, b: t.scale(t.add(a, b), -0.7), [(3, 4), (3, 4)])


def test_rmsnorm():
    check_op(lambda t, x: t.rmsnorm(x), [(2, 3, 6)])


def test_gelu():
    check_op(lambda t, x: t.gelu(x), [(4, 5)])


@pytest.mark.parametrize("kv_heads", [4, 2, 1])
def test_gqa_attention(kv_heads):
    d, heads = 3, 4
    check_op(lambda t, q, k, v: t.gqa_attention(q, k, v, heads, kv_heads, 1 / d),
             [(2, 5, heads * d), (2, 5, kv_heads * d), (2, 5, kv_heads * d)])


def test_embed_accumulates_repeated_ids():
    tape = Tape()
    table = tape.leaf(np.arange(6.0).reshape(3, 2))
    out = tape.embed(table, np.array([[0, 2, 0]]))
    tape.backward(out)
    np.testing.assert_array_equal(table.grad, [[2, 2], [0, 0], [1, 1]])


def test_cross_entropy_value_and_gradient():
    logits = RNG.standard_normal((2, 3, 5))
    targets = RNG.integers(0, 5, size=(2, 3))
    tape = Tape()
    z = tape.leaf(logits)
    loss = tape.cross_entropy(z, targets)
    p = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    want = -np.mean(np.log(np.take_along_axis(p, targets[..., None], -1)))
    assert float(loss.value) == pytest.approx(want, rel=1e-13)
    tape.backward(loss)
    onehot = np.eye(5)[targets]
    np.testing.assert_allclose(z.grad, (p - onehot) / 6, atol=1e-15)


def test_attention_is_causal():
    tape = Tape()
    q = tape.leaf(RNG.standard_normal((1, 4, 4)))
    k, v = (tape.leaf(RNG.standard_normal((1, 4, 2))) for _ in range(2))
    base = tape.gqa_attention(q, k, v, 2, 1, 0.5).value
    k.value[:, 3] += 10.0
    v.value[:, 3] += 10.0
    moved = Tape().gqa_attention(q, k, v, 2, 1, 0.5).value
    np.testing.assert_array_equal(base[:, :3], moved[:, :3])
    assert not np.allclose(base[:, 3], moved[:, 3])
