"""Central-difference gradient checking for named-parameter losses."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .net import NetworkDef


def check_scalar_loss(
    params: dict[str, np.ndarray],
    loss_fn: Callable[[dict], Var],
    epsilon: float = 1e-5,
    n_coords: int = 20,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` maps a parameter dict (Vars or raw arrays; raw arrays are
    treated as constants) to a scalar Var. Coordinates are sampled
    uniformly over all parameter entries; relative error is
    |analytic - fd| / (|analytic| + |fd| + 1e-12). Run in float64: the
    difference quotient drowns in float32 rounding.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    param_vars = {k: ad.param(v) for k, v in params.items()}
    loss_fn(param_vars).backward()
    analytic = {
        k: (np.zeros_like(params[k]) if pv.grad is None else pv.grad)
        for k, pv in param_vars.items()
    }

    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    offsets = np.cumsum(sizes) - sizes
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)

    worst = 0.0
    for flat_idx in picks:
        which = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name = names[which]
        local = int(flat_idx - offsets[which])
        p = params[name]
        orig = p.flat[local]
        p.flat[local] = orig + epsilon
        hi = float(loss_fn(params).value)
        p.flat[local] = orig - epsilon
        lo = float(loss_fn(params).value)
        p.flat[local] = orig
        fd = (hi - lo) / (2.0 * epsilon)
        an = float(analytic[name].flat[local])
        err = abs(an - fd) / (abs(an) + abs(fd) + 1e-12)
        worst = max(worst, err)
    return worst


def finite_diff_check(
    net: NetworkDef,
    params: dict[str, np.ndarray],
    x: np.ndarray,
    loss_fn: Callable[[Var], Var],
    epsilon: float = 1e-5,
    n_coords: int = 20,
    rng: np.random.Generator | None = None,
) -> float:
    """Gradient check for loss_fn(net(params, x)) over sampled coordinates."""
    x = np.asarray(x)

    def wrapped(p):
        return loss_fn(net.apply(p, ad.constant(x)))

    return check_scalar_loss(params, wrapped, epsilon=epsilon, n_coords=n_coords, rng=rng)
