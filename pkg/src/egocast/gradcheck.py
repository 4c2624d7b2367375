from __future__ import annotations

from typing import Callable

import numpy as np

from egocast.tensor import Tensor


class NumericError(ArithmeticError):
    pass


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: np.ndarray,
    eps: float = 1e-5,
    mask: np.ndarray | None = None,
    floor: float = 1e-3,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients of ``f`` at ``x``.

    Per coordinate the error is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, floor)``;
    the floor keeps gradients that are zero in exact arithmetic from turning
    round-off into huge ratios.  ``mask`` (boolean, same shape as ``x``)
    restricts the comparison, which is how callers exclude coordinates sitting
    within ``eps`` of a kink such as an L1 tie.
    """
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    out = f(xt)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("f is not finite at x")
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x)

    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        if mask is not None and not mask.reshape(-1)[i]:
            continue
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(x.copy())).data
        flat[i] = orig - eps
        fm = f(Tensor(x.copy())).data
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f is not finite near coordinate {i}")
        num_flat[i] = (float(fp) - float(fm)) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = np.abs(analytic - numeric) / denom
    if mask is not None:
        err = err[mask]
    return float(err.max()) if err.size else 0.0


def _resolve(module, name: str):
    """(owner, attribute) for a dotted parameter name such as ``encoder.blocks.0.attn.wq``."""
    *path, attr = name.split(".")
    owner = module
    for part in path:
        owner = owner[int(part)] if part.isdigit() else getattr(owner, part)
    return owner, attr


def module_grad_check(module, loss_fn: Callable[[], Tensor], eps: float = 1e-5,
                      floor: float = 1e-3) -> dict[str, float]:
    """Run :func:`finite_diff_check` on every parameter of ``module``.

    ``loss_fn`` takes no arguments and must rebuild the graph from the
    module's current parameters.  Each parameter in turn is swapped for the
    probe tensor, then restored.
    """
    errors = {}
    for name, param in module.named_parameters().items():
        owner, attr = _resolve(module, name)

        def f(t, owner=owner, attr=attr):
            setattr(owner, attr, t)
            try:
                return loss_fn()
            finally:
                setattr(owner, attr, param)

        errors[name] = finite_diff_check(f, param.data, eps=eps, floor=floor)
    return errors
