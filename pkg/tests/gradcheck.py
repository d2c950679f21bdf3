"""Central finite-difference gradient oracle, independent of the autodiff
engine: it only calls the forward path (building fresh graphs) and never
reads recorded gradients except for the analytic side of the comparison.
"""

import numpy as np

from percsim import numerics as nm

FD_H = 1e-5
FD_TOL = 1e-4


def rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def fd_check(build_loss, arrays: dict, h: float = FD_H, tol: float = FD_TOL) -> float:
    """Compare analytic gradients of ``build_loss`` against central
    differences for every element of every array in ``arrays``.

    ``build_loss(tensors)`` must construct a fresh scalar loss from a dict
    of Tensors built around the given arrays.  Returns the worst relative
    error seen; raises AssertionError beyond ``tol``.
    """
    tensors = {k: nm.Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    loss = build_loss(tensors)
    nm.backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}

    def eval_at(mutated: dict) -> float:
        ts = {k: nm.Tensor(v) for k, v in mutated.items()}
        with nm.no_grad():
            return build_loss(ts).item()

    worst = 0.0
    for name, base in arrays.items():
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            work = {k: v.copy() for k, v in arrays.items()}
            wf = work[name].reshape(-1)
            wf[i] = orig + h
            f_plus = eval_at(work)
            wf[i] = orig - h
            f_minus = eval_at(work)
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            err = rel_err(a, numeric)
            worst = max(worst, err)
            assert err < tol, (
                f"gradient mismatch for {name}[{i}]: analytic {a}, numeric {numeric}, "
                f"rel err {err:.3e}")
    return worst
