"""Small linear-algebra helpers used throughout the toolkit.

Everything here is deterministic: QR factors carry a fixed sign
convention and rescaling uses exact powers of two so no mantissa bits
are lost.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateBasis

# Rescale running products whenever the largest entry magnitude leaves
# this window; powers of two keep the rescaling exact.
_SCALE_HI = 2.0 ** 500
_SCALE_LO = 2.0 ** -500


def qr_pos(a):
    """QR factorisation with nonnegative diagonal of R.

    numpy's Householder QR leaves the diagonal sign arbitrary; flipping
    columns makes the factorisation unique, which keeps transported
    frames continuous along an orbit.
    """
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d, r * d[:, None]


def unit(v):
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def orthonormal_complement(v):
    """Columns spanning the orthogonal complement of a unit vector.

    Built from the Householder reflection exchanging e_1 and v, so the
    result is deterministic and varies continuously except at v = -e_1.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    w = v.copy()
    w[0] += 1.0 if v[0] >= 0 else -1.0
    h = np.eye(n) - 2.0 * np.outer(w, w) / (w @ w)
    # column 0 of h is +-v; the rest span its complement
    comp = h[:, 1:]
    if v[0] < 0:
        comp = -comp
    return comp


def principal_angles(a, b):
    """Principal angles (radians, ascending) between column spans."""
    qa, _ = qr_pos(np.asarray(a, dtype=float))
    qb, _ = qr_pos(np.asarray(b, dtype=float))
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))[::-1]


def subspace_gap(a, b):
    """Largest principal angle between column spans: 0 iff they coincide.

    Computed through the sine (norm of the projection defect), which
    resolves angles below the arccos floor of ~1.5e-8.
    """
    qa, _ = qr_pos(np.asarray(a, dtype=float))
    qb, _ = qr_pos(np.asarray(b, dtype=float))
    defect = qb - qa @ (qa.T @ qb)
    s = np.linalg.svd(defect, compute_uv=False)[0]
    return float(np.arcsin(min(1.0, s)))


def _rescale(m, log_scale):
    peak = np.max(np.abs(m))
    if peak == 0.0:
        return m, log_scale
    if peak > _SCALE_HI or peak < _SCALE_LO:
        e = np.frexp(peak)[1]
        m = np.ldexp(m, -e)
        log_scale += e * np.log(2.0)
    return m, log_scale


def scaled_product(factors, start, stop):
    """Product factors[stop-1] @ ... @ factors[start] with overflow guard.

    Returns (matrix, log_scale); the true product is exp(log_scale) * matrix.
    """
    d = factors[start].shape[0] if stop > start else factors.shape[-1]
    m = np.eye(d)
    log_scale = 0.0
    for k in range(start, stop):
        m = factors[k] @ m
        m, log_scale = _rescale(m, log_scale)
    return m, log_scale


def pushed_log_norm(factors, start, stop, basis):
    """log of the spectral norm of (product over [start, stop)) @ basis.

    The block is pushed step by step with exact power-of-two rescaling,
    so arbitrarily long contractions or expansions stay representable.
    """
    w = np.array(basis, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    log_scale = 0.0
    for k in range(start, stop):
        w = factors[k] @ w
        w, log_scale = _rescale(w, log_scale)
    s = np.linalg.norm(w, 2)
    if s == 0.0:
        return -np.inf
    return float(np.log(s) + log_scale)


def pulled_log_norm(factors, start, stop, basis):
    """log spectral norm of (product over [start, stop))^{-1} @ basis.

    Applies per-step inverses in reverse order via linear solves.
    """
    w = np.array(basis, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    log_scale = 0.0
    for k in range(stop - 1, start - 1, -1):
        w = np.linalg.solve(factors[k], w)
        w, log_scale = _rescale(w, log_scale)
    s = np.linalg.norm(w, 2)
    if s == 0.0:
        return -np.inf
    return float(np.log(s) + log_scale)


def scaled_svdvals(factors, start, stop):
    """Singular values of the product over [start, stop) as (values, log_scale)."""
    m, log_scale = scaled_product(factors, start, stop)
    return np.linalg.svd(m, compute_uv=False), log_scale


def check_basis_rank(w, limit=1e8):
    """Raise DegenerateBasis when the column block is numerically rank deficient."""
    s = np.linalg.svd(w, compute_uv=False)
    if s[-1] == 0.0 or s[0] / s[-1] > limit:
        raise DegenerateBasis(
            f"transported basis condition number {s[0] / max(s[-1], 1e-300):.3e} exceeds {limit:.1e}"
        )


def fit_log_rate(spans, log_values):
    """Least-squares slope/intercept of log_values against spans.

    Returns (slope, intercept, max_abs_residual).
    """
    t = np.asarray(spans, dtype=float)
    y = np.asarray(log_values, dtype=float)
    a = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    return float(coef[0]), float(coef[1]), float(np.max(np.abs(resid)))


def haar_frame(n, k, seed=12902):
    """Deterministic generic orthonormal n x k frame (seeded Haar draw)."""
    rng = np.random.default_rng(seed)
    q, _ = qr_pos(rng.standard_normal((n, n)))
    return q[:, :k]


def expm_small(a):
    """Matrix exponential by scaling-and-squaring with a Taylor core.

    Intended for small, well-scaled blocks (restricted generators);
    the Taylor series at ||A/2^s|| <= 1/4 converges to machine
    precision in ~16 terms.
    """
    a = np.asarray(a, dtype=float)
    nrm = np.linalg.norm(a, 2)
    s = max(0, int(np.ceil(np.log2(max(nrm, 1e-30) / 0.25))))
    b = a / (2.0 ** s)
    term = np.eye(a.shape[0])
    out = np.eye(a.shape[0])
    for k in range(1, 20):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out
