import numpy as np
import pytest

from smoothtune import autodiff as ad
from smoothtune.autodiff import Tape
from smoothtune.errors import ContractViolation, InputError
from smoothtune.losses import (
    batch_task_loss,
    kl,
    smooth_loss_mean_node,
    smooth_loss_rows,
    squared_smooth,
    sym_kl,
    task_loss,
)
from smoothtune.tensor import Rng, softmax_row

from oracles import assert_grads_close, central_diff

# frozen 40-digit oracle evaluations
LN2 = 0.6931471805599453
KL_HALF_VS_91 = 0.5108256237659907     # 0.5*ln(5/9) + 0.5*ln(5)
KL_91_VS_HALF = 0.3680642071684971     # 0.9*ln(1.8) + 0.1*ln(0.2)
SYM_KL_HALF_91 = 0.8788898309344878
LN4 = 1.3862943611198906


def test_kl_identical_is_zero():
    assert kl([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_kl_fixtures():
    assert abs(kl([1.0, 0.0], [0.5, 0.5]) - LN2) < 1e-12
    assert abs(kl([0.5, 0.5], [0.9, 0.1]) - KL_HALF_VS_91) < 1e-12
    assert abs(kl([0.9, 0.1], [0.5, 0.5]) - KL_91_VS_HALF) < 1e-12


def test_sym_kl_fixture_and_symmetry():
    assert sym_kl([0.1, 0.9], [0.1, 0.9]) == 0.0
    assert abs(sym_kl([0.5, 0.5], [0.9, 0.1]) - SYM_KL_HALF_91) < 1e-12
    rng = Rng(3)
    for _ in range(10):
        p = softmax_row(rng.gaussian((4,), 1.0))
        q = softmax_row(rng.gaussian((4,), 1.0))
        assert abs(sym_kl(p, q) - sym_kl(q, p)) < 1e-15
        assert sym_kl(p, q) >= 0.0


def test_non_simplex_rejected():
    with pytest.raises(ContractViolation):
        kl([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ContractViolation):
        sym_kl([0.5, 0.5], [0.7, 0.2])


def test_identity_of_indiscernibles():
    rng = Rng(4)
    p = softmax_row(rng.gaussian((5,), 1.0))
    q = p + 1e-13  # max deviation well under 1e-12
    q = q / q.sum()
    assert sym_kl(p, q) <= 1e-9


def test_squared_smooth():
    assert squared_smooth(3.0, 3.0) == 0.0
    assert squared_smooth(2.0, 0.0) == 4.0
    assert squared_smooth(-1.0, 1.0) == 4.0


def test_task_loss_fixtures():
    uniform = np.full(4, 0.25)
    assert abs(task_loss("cross_entropy", uniform, 2) - LN4) < 1e-12
    confident = np.array([1.0, 0.0, 0.0])
    assert task_loss("cross_entropy", confident, 0) == 0.0
    assert task_loss("squared_error", 0.5, 0.5) == 0.0
    with pytest.raises(InputError):
        task_loss("cross_entropy", uniform, 4)


def test_batch_task_loss_is_mean():
    outputs = np.array([[0.25, 0.75], [0.5, 0.5]])
    labels = np.array([1, 0])
    expected = (-np.log(0.75) - np.log(0.5)) / 2
    assert abs(batch_task_loss("cross_entropy", outputs, labels) - expected) < 1e-15
    preds = np.array([1.0, 2.0])
    targets = np.array([0.0, 4.0])
    assert batch_task_loss("squared_error", preds, targets) == 2.5


def test_smooth_loss_rows_matches_scalar_functions():
    rng = Rng(6)
    p = softmax_row(rng.gaussian((6, 3), 1.0))
    q = softmax_row(rng.gaussian((6, 3), 1.0))
    rows = smooth_loss_rows("symmetrized_kl", p, q)
    for i in range(6):
        assert abs(rows[i] - sym_kl(p[i], q[i])) < 1e-12
    a, b = rng.gaussian((4,), 1.0), rng.gaussian((4,), 1.0)
    assert np.allclose(smooth_loss_rows("squared", a, b), (a - b) ** 2, atol=1e-15)


def test_sym_kl_gradient_through_logits_matches_finite_differences():
    rng = Rng(7)
    za = rng.gaussian((3, 4), 1.0)
    zb = rng.gaussian((3, 4), 1.0)

    def build(tape, la, lb):
        return smooth_loss_mean_node("symmetrized_kl", ad.softmax(la), ad.softmax(lb))

    tape = Tape()
    la = tape.leaf(za, requires_grad=True)
    lb = tape.leaf(zb, requires_grad=True)
    grads = tape.backward(build(tape, la, lb))

    def value():
        t = Tape()
        return float(build(t, t.leaf(za), t.leaf(zb)).value)

    fd = central_diff(value, [za, zb])
    assert_grads_close(grads[la], fd[0])
    assert_grads_close(grads[lb], fd[1])
