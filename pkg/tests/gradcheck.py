"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

from labelunc import autodiff as ad


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check(fn, arrays, rng, eps=1e-6):
    """Max relative error between tape gradients and central differences.

    ``fn`` maps Nodes to a Node; the output is contracted with a fixed random
    weight so every output entry contributes.
    """
    arrays = [np.array(a, dtype=float) for a in arrays]
    out_shape = np.shape(ad.value_of(fn(*[ad.Node(a) for a in arrays])))
    weight = rng.standard_normal(out_shape)

    def scalar():
        return float(np.sum(ad.value_of(fn(*[ad.Node(a) for a in arrays])) * weight))

    with ad.Tape() as tape:
        nodes = [ad.Node(a.copy(), requires_grad=True) for a in arrays]
        out = fn(*nodes)
        tape.backward(ad.as_node(out), weight)
    worst = 0.0
    for node, arr in zip(nodes, arrays):
        num = ad.numerical_grad(scalar, arr, eps)
        ana = node.grad if node.grad is not None else np.zeros_like(arr)
        worst = max(worst, rel_error(ana, num))
    return worst
