"""Analytic-vs-finite-difference gradient auditing.

The oracle is central differences (f(p+h) - f(p-h)) / 2h in double
precision. The relative-error floor keeps near-zero gradients from turning
finite-difference roundoff into spurious failures: with h = 1e-5 the FD
noise is ~1e-10, well under floor * tol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Parameter, backward, no_grad, zero_grads

_REL_FLOOR = 1e-4


@dataclass
class ParamReport:
    name: str
    status: str                 # "pass" | "fail" | "skipped"
    max_rel_err: float = 0.0
    checked: int = 0


@dataclass
class GradCheckReport:
    tolerance: float
    params: List[ParamReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.status != "fail" for p in self.params)

    @property
    def max_rel_err(self) -> float:
        errs = [p.max_rel_err for p in self.params if p.status != "skipped"]
        return max(errs) if errs else 0.0

    def format_table(self) -> str:
        lines = [f"{'parameter':<48} {'status':<8} {'max rel err':>12} {'checked':>8}"]
        for p in self.params:
            lines.append(f"{p.name:<48} {p.status:<8} {p.max_rel_err:>12.3e} {p.checked:>8d}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                     f"(max rel err {self.max_rel_err:.3e}, tol {self.tolerance:.1e})")
        return "\n".join(lines)


def grad_check(loss_fn: Callable[[], "Tensor"],
               params: Sequence[Parameter],
               tol: float = 1e-4,
               h: float = 1e-5,
               max_entries_per_param: Optional[int] = None,
               rng: Optional[np.random.Generator] = None,
               grad_scale: float = 1.0) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` to central differences.

    ``loss_fn`` must be a deterministic closure over ``params`` returning a
    scalar Tensor. Frozen parameters are reported as skipped. When
    ``max_entries_per_param`` is set, at most that many coordinates per
    parameter are probed (seeded subsample; exhaustive otherwise).
    ``grad_scale`` is a test hook that corrupts the analytic side.
    """
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = {p.name or str(i): None if p.grad is None else p.grad * grad_scale
                for i, p in enumerate(params)}

    report = GradCheckReport(tolerance=tol)
    rng = rng or np.random.default_rng(0)
    for i, p in enumerate(params):
        name = p.name or f"param[{i}]"
        if not p.trainable:
            report.params.append(ParamReport(name, "skipped"))
            continue
        a = analytic[p.name or str(i)]
        if a is None:
            a = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            coords = np.sort(rng.choice(n, size=max_entries_per_param, replace=False))
        else:
            coords = np.arange(n)
        worst = 0.0
        aflat = a.reshape(-1)
        for k in coords:
            orig = flat[k]
            with no_grad():
                flat[k] = orig + h
                fp = float(loss_fn().data)
                flat[k] = orig - h
                fm = float(loss_fn().data)
            flat[k] = orig
            fd = (fp - fm) / (2.0 * h)
            an = aflat[k]
            rel = abs(an - fd) / max(abs(an), abs(fd), _REL_FLOOR)
            worst = max(worst, rel)
        status = "pass" if worst < tol else "fail"
        report.params.append(ParamReport(name, status, worst, len(coords)))
    zero_grads(params)
    return report
