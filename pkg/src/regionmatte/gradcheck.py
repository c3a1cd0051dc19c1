"""Finite-difference verification of reverse-mode gradients."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, precision


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    per_input_errors: list = field(default_factory=list)
    passed: bool = False
    tolerance: float = 1e-4

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.op_name}: max rel err {self.max_rel_error:.2e} (tol {self.tolerance:.0e})"


def grad_check(op_closure, inputs, epsilon=1e-6, tolerance=1e-4, op_name="op",
               exclude=None, max_entries=None, seed=0):
    """Compare autodiff gradients of a scalar closure to central differences.

    Everything runs in float64. ``inputs`` is a list of arrays (or tensors);
    ``op_closure`` receives one float64 :class:`Tensor` per input and returns a
    scalar tensor. The relative error per entry is
    ``|a - b| / max(|a|, |b|, 1e-8)``.

    ``exclude(i, x)`` may return a boolean mask of entries of input ``i`` to
    skip, e.g. points where the function has a kink. ``max_entries`` limits the
    number of finite-difference probes per input (chosen with ``seed``).
    Failures are reported, never raised.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    with precision(np.float64):
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        out = op_closure(*leaves)
        out.backward()
        analytic = [np.zeros_like(a) if t.grad is None else np.asarray(t.grad, np.float64)
                    for a, t in zip(arrays, leaves)]

        def evaluate():
            return float(op_closure(*[Tensor(a) for a in arrays]).data)

        errors = []
        for i, a in enumerate(arrays):
            flat = a.reshape(-1)
            candidates = np.arange(flat.size)
            if exclude is not None:
                skip = np.asarray(exclude(i, a), dtype=bool).reshape(-1)
                candidates = candidates[~skip]
            if max_entries is not None and candidates.size > max_entries:
                candidates = np.sort(rng.choice(candidates, size=max_entries, replace=False))
            worst = 0.0
            ga = analytic[i].reshape(-1)
            for j in candidates:
                saved = flat[j]
                flat[j] = saved + epsilon
                plus = evaluate()
                flat[j] = saved - epsilon
                minus = evaluate()
                flat[j] = saved
                numeric = (plus - minus) / (2 * epsilon)
                denom = max(abs(ga[j]), abs(numeric), 1e-8)
                worst = max(worst, abs(ga[j] - numeric) / denom)
            errors.append(worst)
    max_err = max(errors) if errors else 0.0
    return GradCheckReport(op_name=op_name, max_rel_error=max_err, per_input_errors=errors,
                           passed=bool(max_err < tolerance), tolerance=tolerance)
