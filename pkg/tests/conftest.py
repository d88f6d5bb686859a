"""Shared test utilities: finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from texweave import ndtensor as nd


def fd_gradcheck(build, leaves, rng, rel_tol=1e-4, step=1e-5, max_coords=None):
    """Check analytic gradients of a scalar graph against central differences.

    ``build()`` must construct the scalar loss afresh from the ``leaves``
    (leaf tensors whose ``.data`` gets perturbed in place).  When
    ``max_coords`` is set, a seeded random subset of coordinates is checked
    per leaf; otherwise every coordinate is.  Near-zero entries are compared
    against an absolute floor scaled to the gradient magnitude, everything
    else at ``rel_tol`` relative error.
    """
    loss = build()
    nd.backward(loss)
    analytic = [leaf.grad.copy() for leaf in leaves]

    for leaf, grads in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = np.arange(n)
        floor = 1e-6 * max(1.0, float(np.max(np.abs(grads))))
        for i in coords:
            keep = flat[i]
            flat[i] = keep + step
            hi = build().item()
            flat[i] = keep - step
            lo = build().item()
            flat[i] = keep
            fd = (hi - lo) / (2.0 * step)
            a = grads.reshape(-1)[i]
            err = abs(a - fd)
            assert err <= rel_tol * max(abs(a), abs(fd)) or err <= floor, (
                f"gradient mismatch at leaf {leaf.op!r} coord {i}: "
                f"analytic {a:.10g} vs fd {fd:.10g}"
            )
