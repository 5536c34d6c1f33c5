"""Orbit integration and tangent/wedge cocycle propagation.

The integrator is an explicit Dormand-Prince 5(4) embedded pair.  The
variational equation dM/dt = DX(x) M is co-integrated with the state as
one coupled system, restarted from the identity on every accepted step,
so the stored per-step matrices compose to the transition matrix over
any span of grid points.

Error control uses a single scalar weight atol + rtol * ||Y|| over the
augmented state, which makes the accepted step sequence invariant under
orthogonal changes of coordinates (up to roundoff) and keeps runs
bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import Blowup, StiffnessFailure
from .models import VectorFieldModel
from .util import scaled_product

# Dormand-Prince 5(4) coefficients; the 5th-order solution is propagated
# and the last stage is evaluated at it (FSAL structure).
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = (9017 / 3168, -355 / 33, 46732 / 5247,
                                49 / 176, -5103 / 18656)
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# b5 - b4: weights of the embedded error estimate
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                                -17253 / 339200, 22 / 525, -1 / 40)


@dataclass(frozen=True)
class StepControl:
    """Integrator tolerances and guards."""

    rtol: float = 1e-9
    atol: float = 1e-12
    bound: float = 1e6          # blowup guard on the state norm
    max_step: float = np.inf
    min_step_floor: float = 1e-14


@dataclass
class OrbitSegment:
    """Time-gridded trajectory with per-step tangent cocycle factors.

    step_cocycles[k] approximates DX_{t[k+1]-t[k]} at states[k]; the
    true factor is exp(renorm_log[k]) * step_cocycles[k] (the log scale
    is zero unless a factor had to be rescaled to stay representable).
    """

    model: object
    times: np.ndarray
    states: np.ndarray
    step_cocycles: np.ndarray
    renorm_log: np.ndarray

    @property
    def n_steps(self):
        return len(self.times) - 1

    @property
    def t_span(self):
        return float(self.times[-1] - self.times[0])

    def index_at(self, t):
        """Grid index closest to time t."""
        return int(np.argmin(np.abs(self.times - t)))

    def propagator(self, i, j):
        """Transition matrix over grid indices [i, j] as (matrix, log_scale).

        Note: a single composed matrix carries at most the float64
        dynamic range across its singular values; determinants over
        long spans should use log_det instead.
        """
        m, log_scale = scaled_product(self.step_cocycles, i, j)
        log_scale += float(np.sum(self.renorm_log[i:j]))
        return m, log_scale

    def log_det(self, i=0, j=None):
        """log |det| of the transition matrix over [i, j], summed per step."""
        if j is None:
            j = self.n_steps
        n = self.states.shape[1]
        total = 0.0
        for k in range(i, j):
            total += np.linalg.slogdet(self.step_cocycles[k])[1]
            total += n * self.renorm_log[k]
        return float(total)


@dataclass
class WedgeCocycle:
    """Second-exterior-power factors of an orbit's step cocycles."""

    orbit: OrbitSegment
    wedge_factors: np.ndarray
    renorm_log: np.ndarray

    def propagator(self, i, j):
        m, log_scale = scaled_product(self.wedge_factors, i, j)
        log_scale += float(np.sum(self.renorm_log[i:j]))
        return m, log_scale


def _rhs(model, y):
    """Augmented right-hand side on the (n, n+1) block [x | M]."""
    x = y[:, 0]
    out = np.empty_like(y)
    out[:, 0] = model.eval(x)
    np.matmul(model.jacobian(x), y[:, 1:], out=out[:, 1:])
    return out


def _initial_step(model, x0, ctrl):
    """Hairer-style deterministic starting step size."""
    f0 = model.eval(x0)
    d0 = np.linalg.norm(x0)
    d1 = np.linalg.norm(f0)
    h0 = 1e-6 if (d1 < 1e-10 or d0 < 1e-10) else 0.01 * d0 / d1
    x1 = x0 + h0 * f0
    d2 = np.linalg.norm(model.eval(x1) - f0) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, ctrl.max_step)


def integrate(model: VectorFieldModel, x0, t_span: float,
              step_ctrl: Optional[StepControl] = None) -> OrbitSegment:
    """Integrate an orbit and its tangent cocycle over [0, t_span].

    Deterministic given (model, x0, step_ctrl).  Raises Blowup when the
    state norm exceeds step_ctrl.bound and StiffnessFailure when the
    step size underflows.
    """
    ctrl = step_ctrl or StepControl()
    if not t_span > 0:
        raise ValueError("t_span must be positive")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    n = x0.shape[0]

    times = [0.0]
    states = [x0.copy()]
    factors = []

    t = 0.0
    x = x0.copy()
    max_step = min(ctrl.max_step, t_span / 8.0)
    h_prop = min(_initial_step(model, x0, ctrl), max_step)
    t_edge = 1e-14 * max(1.0, t_span)
    y_id = np.eye(n)

    while t_span - t > t_edge:
        h = min(h_prop, t_span - t)
        y = np.empty((n, n + 1))
        y[:, 0] = x
        y[:, 1:] = y_id
        k1 = _rhs(model, y)
        k2 = _rhs(model, y + (h * _A21) * k1)
        k3 = _rhs(model, y + h * (_A31 * k1 + _A32 * k2))
        k4 = _rhs(model, y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3))
        k5 = _rhs(model, y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4))
        k6 = _rhs(model, y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3
                                  + _A64 * k4 + _A65 * k5))
        y5 = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7 = _rhs(model, y5)
        err = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
        # scalar weight: rotation-invariant error norm over state + cocycle
        weight = ctrl.atol + ctrl.rtol * max(np.linalg.norm(y), np.linalg.norm(y5))
        enorm = np.linalg.norm(err) / weight
        if enorm <= 1.0:
            t += h
            x = y5[:, 0]
            if np.linalg.norm(x) > ctrl.bound:
                raise Blowup(f"state norm exceeded {ctrl.bound:.3e} at t={t:.6g}")
            times.append(t)
            states.append(x.copy())
            factors.append(y5[:, 1:].copy())
            fac = 5.0 if enorm == 0 else min(5.0, 0.9 * enorm ** -0.2)
        else:
            fac = max(0.2, 0.9 * enorm ** -0.2)
        h_prop = min(h_prop * fac, max_step)
        if h_prop < ctrl.min_step_floor * max(1.0, abs(t)):
            raise StiffnessFailure(f"step size underflow at t={t:.6g}")

    return OrbitSegment(
        model=model,
        times=np.array(times),
        states=np.array(states),
        step_cocycles=np.array(factors),
        renorm_log=np.zeros(len(factors)),
    )


def flow_to(model, x0, t_span, step_ctrl=None):
    """End state of the flow after t_span (no cocycle bookkeeping)."""
    if t_span == 0:
        return np.array(x0, dtype=float)
    return integrate(model, x0, t_span, step_ctrl).states[-1]


def batch_rk4(model, states, dt, n_steps):
    """Fixed-step classical RK4 over a batch of initial states.

    Vectorized ensemble propagation for statistics (basin sampling,
    transients); the adaptive integrator remains the cocycle path.
    states has shape (batch, n); returns the final (batch, n) array.
    """
    x = np.array(states, dtype=float)

    def f(xb):
        return np.stack([model.eval(row) for row in xb])

    for _ in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


# ----------------------------------------------------------------------
# exterior powers
# ----------------------------------------------------------------------

def _pair_index(n):
    pairs = list(combinations(range(n), 2))
    i = np.array([p[0] for p in pairs])
    j = np.array([p[1] for p in pairs])
    return i, j


def wedge2_of(m) -> np.ndarray:
    """Second compound matrix of M, built from 2x2 minors.

    Row/column pairs are ordered lexicographically; entry
    ((i<j),(k<l)) = M[i,k] M[j,l] - M[i,l] M[j,k].  Multiplicative:
    wedge2_of(A @ B) = wedge2_of(A) @ wedge2_of(B).
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if n < 2:
        raise ValueError("wedge square needs n >= 2")
    ri, rj = _pair_index(n)
    return (m[np.ix_(ri, ri)] * m[np.ix_(rj, rj)]
            - m[np.ix_(ri, rj)] * m[np.ix_(rj, ri)])


def wedge_cocycle(orbit: OrbitSegment) -> WedgeCocycle:
    """Per-step exterior squares of the orbit's cocycle factors.

    Built by minors from each step factor, so multiplicativity against
    the stored tangent factors is exact up to roundoff.  Log scale
    factors keep the compound norms representable.
    """
    n = orbit.states.shape[1]
    p = n * (n - 1) // 2
    out = np.empty((orbit.n_steps, p, p))
    logs = np.empty(orbit.n_steps)
    for k in range(orbit.n_steps):
        w = wedge2_of(orbit.step_cocycles[k])
        scale = 0.0
        peak = np.max(np.abs(w))
        if peak > 2.0 ** 500 or (0 < peak < 2.0 ** -500):
            e = np.frexp(peak)[1]
            w = np.ldexp(w, -e)
            scale = e * np.log(2.0)
        out[k] = w
        logs[k] = scale + 2.0 * orbit.renorm_log[k]
    return WedgeCocycle(orbit=orbit, wedge_factors=out, renorm_log=logs)


# ----------------------------------------------------------------------
# restriction to subspaces
# ----------------------------------------------------------------------

@dataclass
class RestrictedCocycle:
    """Cocycle expressed in transported orthonormal bases of a subspace.

    factors[k] maps coordinates in bases[k] to coordinates in
    bases[k+1]; defects[k] is the relative norm of the component of the
    pushed subspace that leaks out of bases[k+1].
    """

    factors: np.ndarray
    bases: np.ndarray
    defects: np.ndarray

    @property
    def max_defect(self):
        return float(np.max(self.defects)) if len(self.defects) else 0.0


def restrict_cocycle(factors, subspace_basis, transport="push") -> RestrictedCocycle:
    """Express a matrix cocycle in transported bases of a subspace.

    transport="push" carries the initial basis forward with the cocycle
    itself, re-orthonormalizing each step (zero defect by construction).
    Passing a sequence of bases (one per grid point, shape
    (K+1, n, d)) instead restricts against that prescribed subspace
    sequence and reports the invariance defect of each step.
    """
    from .util import check_basis_rank, qr_pos

    factors = np.asarray(factors)
    n_steps = factors.shape[0]
    b0 = np.asarray(subspace_basis, dtype=float)
    if b0.ndim == 1:
        b0 = b0[:, None]

    prescribed = None
    if not isinstance(transport, str):
        prescribed = np.asarray(transport, dtype=float)
        if prescribed.shape[0] != n_steps + 1:
            raise ValueError("prescribed basis sequence must have K+1 entries")
    elif transport != "push":
        raise ValueError(f"unknown transport rule '{transport}'")

    d = b0.shape[1]
    out = np.empty((n_steps, d, d))
    defects = np.zeros(n_steps)
    bases = np.empty((n_steps + 1, b0.shape[0], d))
    bases[0] = b0

    for k in range(n_steps):
        w = factors[k] @ bases[k]
        check_basis_rank(w)
        if prescribed is None:
            q, r = qr_pos(w)
            bases[k + 1] = q
            out[k] = r
        else:
            bases[k + 1] = prescribed[k + 1]
            coords = bases[k + 1].T @ w
            leak = w - bases[k + 1] @ coords
            out[k] = coords
            wn = np.linalg.norm(w)
            defects[k] = np.linalg.norm(leak) / wn if wn > 0 else 0.0
    return RestrictedCocycle(factors=out, bases=bases, defects=defects)


# ----------------------------------------------------------------------
# dumps and caches
# ----------------------------------------------------------------------

_CACHE_MAGIC = b"SECHYP1"


def orbit_to_csv(orbit: OrbitSegment, path, header_comment=None):
    """CSV dump: t, state components, accumulated renorm log."""
    n = orbit.states.shape[1]
    acc = np.concatenate([[0.0], np.cumsum(orbit.renorm_log)])
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        cols = ["t"] + [f"x{i}" for i in range(n)] + ["renorm_log"]
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(orbit.times):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in orbit.states[i]]
            row.append(f"{acc[i]:.17g}")
            fh.write(",".join(row) + "\n")


def save_orbit_cache(orbit: OrbitSegment, path):
    """Binary cache: magic 'SECHYP1', then little-endian float64 blocks."""
    n = orbit.states.shape[1]
    n_steps = orbit.n_steps
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<BIQ", 1, n, n_steps))
        fh.write(orbit.times.astype("<f8").tobytes())
        fh.write(orbit.states.astype("<f8").tobytes())
        fh.write(orbit.step_cocycles.astype("<f8").tobytes())
        fh.write(orbit.renorm_log.astype("<f8").tobytes())


def load_orbit_cache(path, model=None) -> OrbitSegment:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise ValueError(f"not an orbit cache (bad magic {magic!r})")
        _ver, n, n_steps = struct.unpack("<BIQ", fh.read(13))
        times = np.frombuffer(fh.read(8 * (n_steps + 1)), dtype="<f8").copy()
        states = np.frombuffer(fh.read(8 * (n_steps + 1) * n), dtype="<f8").copy()
        cocycles = np.frombuffer(fh.read(8 * n_steps * n * n), dtype="<f8").copy()
        renorm = np.frombuffer(fh.read(8 * n_steps), dtype="<f8").copy()
    return OrbitSegment(
        model=model,
        times=times,
        states=states.reshape(n_steps + 1, n),
        step_cocycles=cocycles.reshape(n_steps, n, n),
        renorm_log=renorm,
    )
