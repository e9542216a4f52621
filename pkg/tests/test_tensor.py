import numpy as np
import pytest

from hypersal.tensor import Tape, Tensor, backward, tensor_from

from oracles import max_rel_error, numeric_grad


def test_tensor_from_builds_row_major():
    t = tensor_from([2, 2], [1, 2, 3, 4])
    assert t.shape == (2, 2)
    assert t.data.reshape(-1).tolist() == [1, 2, 3, 4]
    assert t.data[1, 0] == 3
    assert not t.requires_grad and t.grad is None


def test_tensor_from_single_element():
    t = tensor_from([1], [0])
    assert t.shape == (1,) and t.item() == 0.0


def test_tensor_from_length_mismatch():
    with pytest.raises(ValueError, match="holds 2 values"):
        tensor_from([2], [1, 2, 3])


def test_grad_of_sum_is_ones():
    x = Tensor(np.array([1.0, -2.0, 5.0]), requires_grad=True)
    with Tape() as tape:
        loss = x.sum()
    backward(loss, tape)
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_grad_of_sum_of_squares():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    backward(loss, tape)
    assert x.grad.tolist() == [2.0, 4.0, 6.0]


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * x
    with pytest.raises(ValueError, match="single element"):
        backward(y, tape)


def test_backward_rejects_loss_from_other_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        loss = x.sum()
    with pytest.raises(ValueError, match="not recorded"):
        backward(loss, Tape())


def test_untracked_tensor_never_gets_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.full(3, 2.0))
    with Tape() as tape:
        loss = (x * c).sum()
    backward(loss, tape)
    assert c.grad is None
    assert x.grad.tolist() == [2.0, 2.0, 2.0]


def test_nothing_recorded_without_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * x).sum()
    assert y.tape_node is None


def test_branches_accumulate():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=4)

    def grad_of(build):
        x = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            loss = build(x)
        backward(loss, tape)
        return x.grad

    f = lambda x: (x * x * x).sum()  # noqa: E731
    g = lambda x: (x * 3.0).sum()  # noqa: E731
    both = grad_of(lambda x: f(x) + g(x))
    np.testing.assert_allclose(both, grad_of(f) + grad_of(g), rtol=1e-12)


def test_second_backward_doubles_grads():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    backward(loss, tape)
    first = x.grad.copy()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, 2 * first)
    x.zero_grad()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, first)


def test_tape_records_in_topological_order():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        a = x * 2.0
        b = a + x
        loss = b.sum()
    produced = set()
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.tape_node is not None:
                assert id(inp) in produced
        produced.add(id(node.output))
    assert tape.nodes[-1].output is loss


def test_composite_matches_finite_differences():
    rng = np.random.default_rng(11)
    xv = rng.normal(size=(3, 4))
    yv = rng.normal(size=(4,))

    def build(x, y):
        return ((x * y + x) * x[1]).sum() + (y * y).sum()

    x = Tensor(xv, requires_grad=True)
    y = Tensor(yv, requires_grad=True)
    with Tape() as tape:
        loss = build(x, y)
    backward(loss, tape)
    f = lambda: build(Tensor(xv), Tensor(yv)).item()  # noqa: E731
    assert max_rel_error(x.grad, numeric_grad(f, xv)) < 1e-4
    assert max_rel_error(y.grad, numeric_grad(f, yv)) < 1e-4
