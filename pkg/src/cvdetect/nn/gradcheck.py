"""Central-difference gradient checking."""

import math

import numpy as np


def grad_check(params, loss_fn, eps=1e-5, max_entries=None, rng=None):
    """Maximum relative error between analytic and numerical gradients.

    ``loss_fn()`` must evaluate the loss (a float) and accumulate gradients
    into ``params``; any randomness inside it has to be frozen so repeated
    calls see the same function.  Every entry is checked unless
    ``max_entries`` is given, in which case a random subset of that size (at
    least 200) is used.  The error per entry is
    ``|a - n| / max(|a|, |n|, floor)``.

    The difference quotient carries a rounding error of about
    ``ulp(loss) / eps``; a gradient smaller than ``1e4`` times that cannot
    be resolved to four significant digits, so ``floor`` is
    ``max(1e-8, 1e4 * machine_eps * max(1, |loss|) / eps)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not math.isfinite(loss):
        raise FloatingPointError(f"loss is not finite: {loss}")
    analytic = [p.grad.copy() for p in params]
    floor = max(1e-8, 1e4 * np.finfo(np.float64).eps * max(1.0, abs(loss)) / eps)
    for p in params:
        p.zero_grad()

    entries = [(i, j) for i, p in enumerate(params) for j in range(p.value.size)]
    if max_entries is not None and len(entries) > max_entries:
        if max_entries < 200:
            raise ValueError("sampling requires at least 200 entries")
        rng = np.random.default_rng(0) if rng is None else rng
        pick = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[k] for k in np.sort(pick)]

    worst = 0.0
    for i, j in entries:
        p = params[i]
        flat = p.value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        plus = loss_fn()
        flat[j] = orig - eps
        minus = loss_fn()
        flat[j] = orig
        p.zero_grad()
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise FloatingPointError("loss became non-finite during perturbation")
        for q in params:
            q.zero_grad()
        numeric = (plus - minus) / (2.0 * eps)
        a = analytic[i].reshape(-1)[j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst
