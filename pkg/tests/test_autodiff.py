import numpy as np
import pytest

from smoothtune import autodiff as ad
from smoothtune.autodiff import Tape
from smoothtune.errors import ContractViolation
from smoothtune.tensor import Rng, softmax_row

from oracles import assert_grads_close, central_diff


def test_recorded_forward_matches_eager_bitwise():
    rng = Rng(0)
    x = rng.gaussian((4, 6), 2.0)
    tape = Tape()
    out = ad.softmax(tape.leaf(x))
    assert np.array_equal(out.value, softmax_row(x))
    a, b = rng.gaussian((3,), 1.0), rng.gaussian((3,), 1.0)
    t2 = Tape()
    assert np.array_equal(ad.add(t2.leaf(a), t2.leaf(b)).value, a + b)


def test_square_value_and_gradient():
    tape = Tape()
    x = tape.leaf(np.array(3.0), requires_grad=True)
    y = ad.mul(x, x)
    assert y.value == 9.0
    grads = tape.backward(y)
    assert grads[x] == 6.0


def test_unreachable_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]), requires_grad=True)
    c = tape.leaf(np.array(5.0), requires_grad=True)
    out = ad.sum_all(ad.mul(x, x))
    grads = tape.backward(out)
    assert np.array_equal(grads[c], np.zeros(()))
    assert np.array_equal(grads[x], [2.0, 4.0])


def test_softmax_cross_entropy_gradient_closed_form():
    rng = Rng(8)
    logits = rng.gaussian((6, 4), 1.5)
    labels = np.array([0, 1, 2, 3, 1, 0])
    tape = Tape()
    lv = tape.leaf(logits, requires_grad=True)
    probs = ad.softmax(lv)
    loss = ad.cmul(ad.sum_all(ad.log(ad.clip(ad.pick(probs, labels), 1e-12, 1.0))), -1.0)
    g = tape.backward(loss)[lv]
    expected = probs.value.copy()
    expected[np.arange(6), labels] -= 1.0
    assert np.max(np.abs(g - expected)) < 1e-10


def _random_net_loss(tape, leaves, x, labels):
    W1, b1, W2, b2 = leaves
    h = ad.tanh(ad.add_broadcast(ad.matmul(tape.const(x), W1), b1))
    logits = ad.add_broadcast(ad.matmul(h, W2), b2)
    p = ad.softmax(logits)
    picked = ad.clip(ad.pick(p, labels), 1e-12, 1.0)
    return ad.cmul(ad.mean_all(ad.log(picked)), -1.0)


def test_finite_difference_agreement_params_and_inputs():
    rng = Rng(21)
    x = rng.gaussian((5, 3), 1.0)
    labels = np.array([0, 1, 1, 0, 1])
    arrays = [rng.gaussian((3, 8), 0.5), rng.gaussian((8,), 0.2),
              rng.gaussian((8, 2), 0.5), rng.gaussian((2,), 0.2)]

    tape = Tape()
    leaves = [tape.leaf(a, requires_grad=True) for a in arrays]
    xleaf = tape.leaf(x, requires_grad=True)
    h = ad.tanh(ad.add_broadcast(ad.matmul(xleaf, leaves[0]), leaves[1]))
    logits = ad.add_broadcast(ad.matmul(h, leaves[2]), leaves[3])
    loss = ad.cmul(ad.mean_all(ad.log(ad.clip(ad.pick(ad.softmax(logits), labels),
                                              1e-12, 1.0))), -1.0)
    grads = tape.backward(loss)

    def value():
        t = Tape()
        ls = [t.leaf(a) for a in arrays]
        xl = t.leaf(x)
        hh = ad.tanh(ad.add_broadcast(ad.matmul(xl, ls[0]), ls[1]))
        lg = ad.add_broadcast(ad.matmul(hh, ls[2]), ls[3])
        out = ad.cmul(ad.mean_all(ad.log(ad.clip(ad.pick(ad.softmax(lg), labels),
                                                 1e-12, 1.0))), -1.0)
        return float(out.value)

    fd = central_diff(value, arrays + [x])
    for leaf, g_fd in zip(leaves + [xleaf], fd):
        assert_grads_close(grads[leaf], g_fd)


def test_stop_gradient():
    tape = Tape()
    x = tape.leaf(np.array(3.0), requires_grad=True)
    y = ad.stop_gradient(x)
    assert np.array_equal(y.value, x.value)
    grads = tape.backward(ad.sum_all(y))
    assert grads[x] == 0.0

    # product with one frozen factor: d/dx (x * sg(x)) = x
    t2 = Tape()
    x2 = t2.leaf(np.array(3.0), requires_grad=True)
    z = ad.mul(x2, ad.stop_gradient(x2))
    assert t2.backward(z)[x2] == 3.0


def test_backward_linearity():
    rng = Rng(4)
    x = rng.gaussian((6,), 1.0)
    a, b = 2.5, -1.25

    def grad_of(fa, fb):
        tape = Tape()
        leaf = tape.leaf(x, requires_grad=True)
        f = ad.sum_all(ad.mul(leaf, leaf))
        g = ad.sum_all(ad.tanh(leaf))
        out = ad.add(ad.cmul(f, fa), ad.cmul(g, fb))
        return tape.backward(out)[leaf]

    combined = grad_of(a, b)
    separate = a * grad_of(1.0, 0.0) + b * grad_of(0.0, 1.0)
    assert np.max(np.abs(combined - separate)) < 1e-10


def test_backward_determinism_bitwise():
    rng = Rng(9)
    x = rng.gaussian((4, 4), 1.0)

    def run():
        tape = Tape()
        leaf = tape.leaf(x, requires_grad=True)
        out = ad.mean_all(ad.softmax(ad.tanh(ad.matmul(leaf, leaf))))
        return tape.backward(out)[leaf]

    assert np.array_equal(run(), run())


def test_cross_tape_operands_rejected():
    t1, t2 = Tape(), Tape()
    a = t1.leaf(np.ones(2))
    b = t2.leaf(np.ones(2))
    with pytest.raises(ContractViolation):
        ad.add(a, b)


def test_non_scalar_backward_rejected():
    tape = Tape()
    x = tape.leaf(np.ones((2, 2)), requires_grad=True)
    y = ad.tanh(x)
    with pytest.raises(ContractViolation):
        tape.backward(y)


def test_assorted_primitive_gradients_match_finite_differences():
    rng = Rng(14)
    a = rng.gaussian((3, 4), 1.0)
    gain = 1.0 + rng.gaussian((4,), 0.1)
    bias = rng.gaussian((4,), 0.1)
    table = rng.gaussian((5, 3), 1.0)
    ids = np.array([[0, 4], [2, 2]])
    arrays = [a, gain, bias, table]

    def build(tape, leaves):
        av, gv, bv, tv = leaves
        ln = ad.layer_norm(av, gv, bv)
        e = ad.gather_rows(tv, ids)
        pooled = ad.mean_axis(e, 1)
        mixed = ad.matmul(ad.swapaxes(ln, 0, 1), ad.reshape(ln, (3, 4)))
        return ad.add(ad.mean_all(ad.exp(ad.cmul(mixed, 0.1))),
                      ad.mean_all(ad.relu(pooled)))

    tape = Tape()
    leaves = [tape.leaf(arr, requires_grad=True) for arr in arrays]
    grads = tape.backward(build(tape, leaves))

    def value():
        t = Tape()
        ls = [t.leaf(arr) for arr in arrays]
        return float(build(t, ls).value)

    fd = central_diff(value, arrays)
    for leaf, g_fd in zip(leaves, fd):
        assert_grads_close(grads[leaf], g_fd)
