"""Central finite-difference gradient checking."""
import numpy as np

from .tensor import Tensor


def grad_check(op, inputs, eps=1e-5, seed=0, max_entries=None):
    """Compare backprop gradients of ``op`` with central differences.

    ``op`` maps a list of Tensors to a Tensor. The scalar checked is
    ``sum(op(inputs) * w)`` for a fixed random ``w``. Returns the largest
    error over all inputs, each measured as ``max|analytic - numeric|``
    divided by the largest gradient magnitude of that input. The divisor is
    floored at ``1e-6`` of the largest gradient over all inputs, so inputs
    with an exactly zero gradient (a key bias under softmax, say) are judged
    on finite-difference noise rather than on 0/0. With ``max_entries`` only
    a random subset of entries per input is perturbed.
    """
    rng = np.random.default_rng(seed)
    tensors = [t if isinstance(t, Tensor) else Tensor(t, requires_grad=True) for t in inputs]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    out = op(tensors)
    w = rng.standard_normal(out.shape)
    (out * w).sum().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]

    def loss():
        return float(np.sum(op(tensors).data * w))

    results = []
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss()
            flat[i] = orig - eps
            down = loss()
            flat[i] = orig
            num[j] = (up - down) / (2.0 * eps)
        ana = ga.reshape(-1)[idx]
        results.append((np.max(np.abs(ana - num)), max(np.max(np.abs(ana)), np.max(np.abs(num)))))
    floor = max(1e-6 * max(s for _, s in results), 1e-12)
    return float(max(d / max(s, floor) for d, s in results))
