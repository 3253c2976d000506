"""Face traces and the stabilised upwind flux.

Orientation is owner -> neighbor: ``inside`` is the owner trace, ``outside``
the neighbor trace, and ``jump = outside - inside``.
"""

from __future__ import annotations

import numpy as np


def average(inside, outside):
    return 0.5 * (np.asarray(inside) + np.asarray(outside))


def jump(inside, outside):
    return np.asarray(outside) - np.asarray(inside)


def upwind(r_in, r_out, vn):
    """Donor-cell flux ``r_in [vn]^+ + r_out [vn]^-``."""
    vn = np.asarray(vn, dtype=float)
    pos = 0.5 * (vn + np.abs(vn))
    neg = 0.5 * (vn - np.abs(vn))
    return np.asarray(r_in) * pos + np.asarray(r_out) * neg


def dissipation_coefficient(vn, h: float, alpha: float):
    """Coefficient multiplying ``-[[r]]`` in the numerical flux; at least ``h**alpha``."""
    return h**alpha + 0.5 * np.abs(vn)


def numerical_flux(r_in, r_out, vn, h: float, alpha: float):
    """Stabilised flux ``Up[r, v] - h^alpha [[r]]`` in average-minus-dissipation form.

    ``vn`` is the normal component of the averaged velocity trace. Works
    elementwise and broadcasts, so vector-valued ``r`` (trailing component
    axis, with ``vn[..., None]``) is handled componentwise.
    """
    r_in = np.asarray(r_in, dtype=float)
    r_out = np.asarray(r_out, dtype=float)
    vn = np.asarray(vn, dtype=float)
    return 0.5 * (r_in + r_out) * vn - (h**alpha + 0.5 * np.abs(vn)) * (r_out - r_in)


def numerical_flux_upwind_form(r_in, r_out, vn, h: float, alpha: float):
    """Same flux assembled as ``upwind - h^alpha * jump``; kept as an independent check."""
    return upwind(r_in, r_out, vn) - h**alpha * jump(r_in, r_out)


def numerical_flux_vector(r_in, r_out, vn, h: float, alpha: float):
    """Componentwise flux for ``r`` with a trailing component axis."""
    vn = np.asarray(vn, dtype=float)
    return numerical_flux(r_in, r_out, vn[..., None], h, alpha)


def pressure_face_term(p_in, p_out):
    """Centred pressure trace used in the momentum flux."""
    return average(p_in, p_out)
