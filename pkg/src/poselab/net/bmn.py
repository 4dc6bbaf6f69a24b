"""Batch mixture normalization: whiten a bi-modal sim/real activation mix.

Two sibling feature maps s and r (channels useful on sim and real inputs
respectively) are masked by a per-sample domain score z: s' = z * s,
r' = (1 - z) * r (fuzzy AND as elementwise product).  The masked channels
are batch-normalized jointly as one concatenated stack, then merged back
into a single map with a fuzzy OR realized as the sum.  z can be the hard
0/1 domain flag of each sample or the output of a learned gate head.
"""

from __future__ import annotations

import numpy as np

from .ops import NormState, batchnorm_forward, batchnorm_backward, ShapeError


def bmn_forward(s, r, z, gamma, beta, state: NormState | None, training: bool):
    """Masked joint normalization and merge; gamma/beta cover 2C channels.

    s, r: (N, H, W, C) sibling features; z: (N,) domain scores in [0, 1].
    Returns (y, cache) with y of shape (N, H, W, C).
    """
    if s.shape != r.shape:
        raise ShapeError(f"s{s.shape} and r{r.shape} must match")
    z = np.asarray(z, dtype=s.dtype).reshape(-1)
    if len(z) != s.shape[0]:
        raise ShapeError("z must have one score per sample")
    if z.size and (z.min() < 0.0 or z.max() > 1.0):
        raise ValueError("domain scores z must lie in [0, 1]")
    c = s.shape[3]
    zb = z[:, None, None, None]
    masked = np.concatenate([zb * s, (1.0 - zb) * r], axis=3)
    normed, bn_cache = batchnorm_forward(masked, gamma, beta, state, training)
    y = normed[..., :c] + normed[..., c:]
    cache = (bn_cache, s, r, z, c)
    return y, cache


def bmn_backward(dout, cache):
    """Returns (ds, dr, dz, dgamma, dbeta)."""
    bn_cache, s, r, z, c = cache
    dnormed = np.concatenate([dout, dout], axis=3)
    dmasked, dgamma, dbeta = batchnorm_backward(dnormed, bn_cache)
    dsp = dmasked[..., :c]
    drp = dmasked[..., c:]
    zb = z[:, None, None, None]
    ds = zb * dsp
    dr = (1.0 - zb) * drp
    dz = (dsp * s - drp * r).sum(axis=(1, 2, 3))
    return ds, dr, dz, dgamma, dbeta
