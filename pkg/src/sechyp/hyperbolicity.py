"""Hyperbolicity functionals, singularity classification, and verdicts.

Every asymptotic condition (limsup/liminf averages, uniform rate
bounds) is reported as a finite-time statistic over an explicit window,
together with the sample of initial conditions it was evaluated on.
Verdicts never claim more than the window shows: `pass` means the
finite-time certificate holds at the stated margins, `inconclusive`
means the probe budget ran out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import Blowup, NotAnEquilibrium, NotPeriodic
from .flowcalc import StepControl, integrate, wedge2_of
from .models import (SuspensionModel, VectorFieldModel, refine_equilibrium)
from .splitting import (RATE_MARGIN, SplittingSequence, estimate_splitting,
                        restricted_window_norm)
from .util import fit_log_rate, qr_pos, scaled_product

# ----------------------------------------------------------------------
# singularity classification
# ----------------------------------------------------------------------

@dataclass
class SingularityAnalysis:
    """Eigenstructure of an equilibrium and its Lorenz-like flags.

    `center_alternates` records other real eigenvalues that would also
    qualify as the center when several candidates pass the domination
    inequality; the reported choice is the smallest |Re|.
    """

    location: np.ndarray
    eigenvalues: np.ndarray            # sorted by real part, ascending
    is_hyperbolic: bool
    index: int                         # count of Re < 0
    lorenz_like: bool
    active: str                        # 'yes' | 'no' | 'undetermined'
    splitting_dims: Optional[tuple]    # (dim E^ss, 1, dim E^uu) if lorenz_like
    center_alternates: list = field(default_factory=list)

    def as_dict(self):
        return {
            "location": [float(v) for v in self.location],
            "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
            "is_hyperbolic": self.is_hyperbolic,
            "index": self.index,
            "lorenz_like": self.lorenz_like,
            "active": self.active,
            "splitting_dims": list(self.splitting_dims) if self.splitting_dims else None,
            "center_alternates": [float(v) for v in self.center_alternates],
        }


def _lorenz_like_split(eigs):
    """Try to split the spectrum as strong-stable + 1-d real center +
    strong-unstable with |center| dominated by both extreme blocks.

    Returns (lorenz_like, dims, chosen_center, alternates)."""
    real_mask = np.abs(eigs.imag) < 1e-10
    candidates = []
    for i in np.where(real_mask)[0]:
        lam_c = eigs[i].real
        rest = np.delete(eigs, i)
        stable = rest[rest.real < 0]
        unstable = rest[rest.real > 0]
        if len(stable) + len(unstable) != len(rest):
            continue  # another eigenvalue sits on the axis
        if len(stable) == 0 or len(unstable) == 0:
            continue  # genuine three-block structure required
        lam_s = np.max(stable.real)
        lam_u = np.min(unstable.real)
        if abs(lam_c) < min(-lam_s, lam_u):
            candidates.append((abs(lam_c), lam_c, len(stable), len(unstable)))
    if not candidates:
        return False, None, None, []
    candidates.sort()
    _, lam_c, d_ss, d_uu = candidates[0]
    alternates = [c[1] for c in candidates[1:]]
    return True, (d_ss, 1, d_uu), lam_c, alternates


def _grow_manifold(model, sigma, direction, forward, trapping, ball_radius,
                   arc_budget, step_ctrl):
    """Grow a 1-d local invariant manifold along an eigendirection and
    test whether it reaches the trapping region minus a ball around the
    equilibrium.  Returns 'yes' when it does while staying inside the
    region, 'undetermined' otherwise."""
    work = model
    if not forward:
        def back_eval(x, _m=model):
            return -_m.eval(x)

        def back_jac(x, _m=model):
            return -_m.jacobian(x)

        work = VectorFieldModel(
            name=model.name + "_rev", dim=model.dim, params=model.params,
            eval=back_eval, jacobian=back_jac,
        )
    lo, hi = trapping[:, 0], trapping[:, 1]
    x = sigma + 1e-6 * direction
    arc = 0.0
    reached = False
    for _ in range(200):
        try:
            orbit = integrate(work, x, 1.0, step_ctrl)
        except Blowup:
            return "undetermined"
        seg = np.linalg.norm(np.diff(orbit.states, axis=0), axis=1)
        arc += float(np.sum(seg))
        inside = np.all((orbit.states >= lo - 1e-9) & (orbit.states <= hi + 1e-9))
        if not inside:
            return "undetermined"
        if np.max(np.linalg.norm(orbit.states - sigma, axis=1)) > ball_radius:
            reached = True
        if reached and arc > 10 * ball_radius:
            return "yes"
        if arc > arc_budget:
            return "undetermined"
        x = orbit.states[-1]
    return "undetermined"


def classify_singularity(model: VectorFieldModel, sigma,
                         arc_budget: float = 1e3,
                         step_ctrl=None) -> SingularityAnalysis:
    """Eigenstructure and Lorenz-like classification of an equilibrium.

    `sigma` is Newton-refined first; raises NotAnEquilibrium when the
    residual stays above 1e-8.  The `active` flag is probed by growing
    local stable/unstable curves along the real eigendirections with a
    finite arc-length budget and testing re-entry into the trapping
    region away from the equilibrium; 'undetermined' is returned
    whenever the budget is exhausted without a decision.
    """
    sigma = np.asarray(sigma, dtype=float)
    seed = sigma.copy()
    try:
        sigma = refine_equilibrium(model, sigma, residual=1e-12)
    except NotAnEquilibrium:
        if np.linalg.norm(model.eval(sigma)) > 1e-8:
            raise
    # refinement must polish the seed, not hop to another basin
    drift = np.linalg.norm(sigma - seed) / (1.0 + np.linalg.norm(seed))
    if drift > 0.05:
        raise NotAnEquilibrium(
            f"seed is not near an equilibrium (Newton drifted {drift:.2e})"
        )
    j = model.jacobian(sigma)
    eigs, vecs = np.linalg.eig(j)
    order = np.argsort(eigs.real + 1e-12 * eigs.imag)
    eigs = eigs[order]
    vecs = vecs[:, order]

    is_hyp = bool(np.min(np.abs(eigs.real)) > 1e-8)
    index = int(np.sum(eigs.real < 0))
    lorenz_like, dims, _center, alternates = _lorenz_like_split(eigs)

    active = "undetermined"
    if not is_hyp:
        active = "no"
    elif model.trapping_region is not None:
        box = np.asarray(model.trapping_region, dtype=float)
        ball = 0.05 * float(np.max(box[:, 1] - box[:, 0]))
        sides = {"stable": False, "unstable": False}
        for i, lam in enumerate(eigs):
            if abs(lam.imag) > 1e-10:
                continue
            forward = lam.real > 0
            side = "unstable" if forward else "stable"
            if sides[side]:
                continue
            v = np.real(vecs[:, i])
            v = v / np.linalg.norm(v)
            for direction in (v, -v):
                got = _grow_manifold(model, sigma, direction, forward, box,
                                     ball, arc_budget, step_ctrl)
                if got == "yes":
                    sides[side] = True
                    break
        if sides["stable"] and sides["unstable"]:
            active = "yes"

    return SingularityAnalysis(
        location=sigma,
        eigenvalues=eigs,
        is_hyperbolic=is_hyp,
        index=index,
        lorenz_like=lorenz_like,
        active=active,
        splitting_dims=dims,
        center_alternates=alternates,
    )


# ----------------------------------------------------------------------
# expansion functionals on the center-unstable bundle
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionalResult:
    """Windowed rate statistic: mean/min/max over the sampled windows."""

    rate: float
    min_rate: float
    max_rate: float
    window: float
    n_samples: int


def _window_pairs(times, window, n_starts):
    total = times[-1] - times[0]
    window = min(window, total)
    latest = times[-1] - window
    starts = np.linspace(times[0], max(times[0], latest), n_starts)
    pairs = []
    for s0 in starts:
        i = int(np.searchsorted(times, s0, side="left"))
        j = int(np.searchsorted(times, min(s0 + window, times[-1]), side="right")) - 1
        if j > i:
            pairs.append((i, j))
    return pairs


def _plane_grid(d, n_planes, seed=40813):
    """Deterministic sample of 2-planes in R^d: all coordinate pairs plus
    seeded generic frames up to n_planes."""
    planes = []
    for a in range(d):
        for b in range(a + 1, d):
            m = np.zeros((d, 2))
            m[a, 0] = 1.0
            m[b, 1] = 1.0
            planes.append(m)
    rng = np.random.default_rng(seed)
    while len(planes) < n_planes:
        q, _ = qr_pos(rng.standard_normal((d, 2)))
        planes.append(q)
    return planes


def _min_plane_log_det(m, log_scale, planes):
    """Smallest log |det| of the restriction of m to a 2-plane.

    The exact minimizer is the plane of the two smallest right singular
    vectors (the bottom singular 2-vector of the second compound is
    decomposable); the sampled plane grid is kept as an independent
    cross-check and can only agree or exceed it.
    """
    s = np.linalg.svd(m, compute_uv=False)
    best = float(np.log(s[-1]) + np.log(s[-2]) + 2 * log_scale)
    if planes is not None:
        for p in planes:
            sv = np.linalg.svd(m @ p, compute_uv=False)
            best = min(best, float(np.log(sv[0]) + np.log(sv[1]) + 2 * log_scale))
    return best


def _restricted_product(r_factors, i, j):
    m, log_scale = scaled_product(r_factors, i, j)
    return m, log_scale


def sectional_expansion_functional(seq: SplittingSequence, window: float,
                                   n_starts: int = 10,
                                   n_planes: int = 64) -> FunctionalResult:
    """Windowed min-over-2-planes determinant rate inside E^cu.

    For d_cu = 2 there is a single plane; otherwise the minimum runs
    over the exact bottom singular pair plus a deterministic plane grid
    of >= n_planes.  Uniform sectional expansion holds on the sample
    iff min_rate >= +1e-3.
    """
    rcu, _ = seq.restricted("cu")
    times = seq.times
    planes = None if seq.d_cu == 2 else _plane_grid(seq.d_cu, n_planes)
    rates = []
    for i, j in _window_pairs(times, window, n_starts):
        m, ls = _restricted_product(rcu, i, j)
        rates.append(_min_plane_log_det(m, ls, planes) / (times[j] - times[i]))
    rates = np.asarray(rates)
    return FunctionalResult(float(rates.mean()), float(rates.min()),
                            float(rates.max()), window, len(rates))


def volume_expansion_functional(seq: SplittingSequence, window: float,
                                n_starts: int = 10) -> FunctionalResult:
    """Windowed log |det| rate of the cocycle restricted to E^cu."""
    rcu, _ = seq.restricted("cu")
    times = seq.times
    rates = []
    for i, j in _window_pairs(times, window, n_starts):
        m, ls = _restricted_product(rcu, i, j)
        sign, logdet = np.linalg.slogdet(m)
        rates.append((logdet + seq.d_cu * ls) / (times[j] - times[i]))
    rates = np.asarray(rates)
    return FunctionalResult(float(rates.mean()), float(rates.min()),
                            float(rates.max()), window, len(rates))


def ash_functional(seq: SplittingSequence, n_checkpoints: int = 24,
                   n_planes: int = 64) -> float:
    """Running max over increasing horizons of the min-plane determinant
    rate from the start of the valid range (pointwise asymptotic
    expansion proxy)."""
    rcu, _ = seq.restricted("cu")
    times = seq.times
    total = times[-1] - times[0]
    planes = None if seq.d_cu == 2 else _plane_grid(seq.d_cu, n_planes)
    horizons = np.geomspace(total / 64.0, total, n_checkpoints)
    best = -np.inf
    for horizon in horizons:
        j = int(np.searchsorted(times, times[0] + horizon, side="right")) - 1
        if j <= 0:
            continue
        m, ls = _restricted_product(rcu, 0, j)
        best = max(best, _min_plane_log_det(m, ls, planes) / (times[j] - times[0]))
    return float(best)


def mnuse_functional(seq: SplittingSequence, tau: float,
                     n_samples: int = 200) -> float:
    """Per-unit-time average of log ||[wedge^2 (time-tau cocycle | E^cu)]^{-1}||
    along the orbit, the mostly-nonuniform sectional expansion statistic.

    The integral over window starts is approximated by uniform sampling
    on the checkpoint grid; each sample restricts the cocycle to E^cu
    over [s, s + tau] and takes the smallest singular value of its
    second compound.  Negative values certify sectional expansion of
    the time-tau map on average.
    """
    rcu, _ = seq.restricted("cu")
    times = seq.times
    t_last = times[-1] - tau
    if t_last <= times[0]:
        raise ValueError("valid range shorter than one tau window")
    starts = np.linspace(times[0], t_last, n_samples)
    vals = []
    for s0 in starts:
        i = int(np.searchsorted(times, s0, side="left"))
        j = int(np.searchsorted(times, times[i] + tau, side="right")) - 1
        if j <= i:
            continue
        m, ls = _restricted_product(rcu, i, j)
        w = wedge2_of(m)
        sv = np.linalg.svd(w, compute_uv=False)
        span = times[j] - times[i]
        vals.append(-(np.log(sv[-1]) + 2 * ls) / span)
    return float(np.mean(vals))


def nuse_functional(lpf_cocycle, seq: SplittingSequence, tau: float) -> float:
    """Per-unit-time average of log ||(P^tau | N^cu)^{-1}|| over the orbit
    of the time-tau map, where N^cu = E^cu intersected with the normal
    space of the flow direction."""
    orbit = seq.orbit
    times = seq.times
    n_windows = int(np.floor((times[-1] - times[0]) / tau))
    if n_windows < 1:
        raise ValueError("valid range shorter than one tau window")

    # checkpoint indices closest to the tau grid
    edges_k = []
    for i in range(n_windows + 1):
        target = times[0] + i * tau
        k = int(np.searchsorted(times, target, side="left"))
        k = min(k, len(times) - 1)
        edges_k.append(k)

    d_ncu = seq.d_cu - 1
    total = 0.0
    total_time = 0.0
    for w in range(n_windows):
        ka, kb = edges_k[w], edges_k[w + 1]
        if kb <= ka:
            continue
        ga, gb = int(seq.grid[ka]), int(seq.grid[kb])
        ua = _ncu_coords(lpf_cocycle, seq, ka, ga, d_ncu)
        ub = _ncu_coords(lpf_cocycle, seq, kb, gb, d_ncu)
        p, ls = scaled_product(lpf_cocycle.lpf_factors, ga, gb)
        restricted = ub.T @ (p @ ua)
        sv = np.linalg.svd(restricted, compute_uv=False)
        total += -(np.log(sv[-1]) + ls)
        total_time += times[kb] - times[ka]
    return float(total / total_time)


def _ncu_coords(lpf_cocycle, seq, k, grid_index, d_ncu):
    """Orthonormal coordinates of N^cu = E^cu ^ X^perp in the normal frame."""
    frame = lpf_cocycle.frames[grid_index]
    c = frame.T @ seq.Ecu[k]
    u, s, _ = np.linalg.svd(c, full_matrices=False)
    return u[:, :d_ncu]


def nne_functional(seq: SplittingSequence, n_dirs: int = 8,
                   flow_cone: float = 1e-2, seed: int = 90117) -> FunctionalResult:
    """Minimal tail growth rate of 2-planes spanned by a sampled
    direction v in E^cu and the flow direction.

    The reported quantity per direction is
    (log ||Phi_T v ^ Phi_T X|| - log ||Phi_T X||) / T, a proxy for the
    Lyapunov exponent of v relative to the neutral flow direction; the
    liminf is proxied by the running inf over the last half of the
    checkpoints.  No-negative-exponents passes iff min >= -1e-3.

    Interpretation note: the wedge is taken between the pushed vector
    and the pushed flow direction (the 2-plane they span); this is
    flagged in every report that carries the statistic.
    """
    from .models import SuspensionModel

    orbit = seq.orbit
    model = orbit.model
    suspension = isinstance(model, SuspensionModel)
    rng = np.random.default_rng(seed)
    k_blocks = seq.n_blocks
    times = seq.times

    # flow directions and norms at checkpoints
    dirs = np.empty((k_blocks + 1, orbit.states.shape[1]))
    for k in range(k_blocks + 1):
        x = orbit.states[seq.grid[k]]
        v = np.array([0.0, 0.0, 1.0]) if suspension else model.eval(x)
        dirs[k] = v / np.linalg.norm(v)

    worst = np.inf
    results = []
    tried = 0
    while len(results) < n_dirs and tried < 10 * n_dirs:
        tried += 1
        coords = rng.standard_normal(seq.d_cu)
        v = seq.Ecu[0] @ (coords / np.linalg.norm(coords))
        angle = np.arccos(np.clip(abs(v @ dirs[0]), 0, 1))
        if angle <= flow_cone:
            continue
        log_norm = 0.0
        w = v.copy()
        rates = []
        for k in range(k_blocks):
            w = seq.factors[k] @ w
            nw = np.linalg.norm(w)
            log_norm += np.log(nw)
            w = w / nw
            t_el = times[k + 1] - times[0]
            sin_t = np.sqrt(max(0.0, 1.0 - float(w @ dirs[k + 1]) ** 2))
            if sin_t <= 0 or t_el <= 0:
                continue
            rates.append((log_norm + np.log(sin_t)) / t_el)
        tail = rates[len(rates) // 2:]
        val = float(np.min(tail))
        results.append(val)
        worst = min(worst, val)
    arr = np.asarray(results)
    return FunctionalResult(float(arr.mean()), float(arr.min()),
                            float(arr.max()), float(times[-1] - times[0]),
                            len(arr))


# ----------------------------------------------------------------------
# multisingular estimate
# ----------------------------------------------------------------------

@dataclass
class MshResult:
    """Finite-time multisingular-hyperbolicity certificate components."""

    passed: bool
    ns_slope: float
    nu_slope: float
    domination_slope: float
    singularities_ok: bool
    n_qualifying: int
    exclusion_radius: float
    avoid_window: float
    details: dict = field(default_factory=dict)


def _singular_distances(orbit, model):
    """Distance of each grid state to the model's singular set."""
    if isinstance(model, SuspensionModel):
        return np.abs(orbit.states[:, 0])
    if not model.singularities:
        return np.full(orbit.states.shape[0], np.inf)
    d = np.full(orbit.states.shape[0], np.inf)
    for s in model.singularities:
        d = np.minimum(d, np.linalg.norm(orbit.states - s, axis=1))
    return d


def msh_estimate(lpf_cocycle, seq: SplittingSequence, radius: float,
                 avoid_window: float, sing_analyses=None,
                 n_starts: int = 6) -> MshResult:
    """Fit the uniform decay of the restricted linear Poincare flow away
    from the singular set, and combine with the Lorenz-like structure of
    the declared equilibria.

    Qualifying window starts are checkpoints whose forward
    `avoid_window` stays at distance > radius from every singularity.
    The normal splitting N^s/N^u is inherited from the tangent
    splitting (N^s from E^s, N^u from E^cu ^ X^perp); slopes are fitted
    on log ||P^t|N^s|| and log ||P^-t|N^u||.  The singular-domination
    component reuses the same restricted factors.
    """
    orbit = seq.orbit
    times = seq.times
    dist = _singular_distances(orbit, orbit.model)
    d_ns = seq.d_s
    d_nu = seq.d_cu - 1

    # restricted LPF factor streams on the checkpoint grid
    k_blocks = seq.n_blocks
    ns_f = np.empty((k_blocks, d_ns, d_ns))
    nu_f = np.empty((k_blocks, d_nu, d_nu))
    ns_b = [None] * (k_blocks + 1)
    nu_b = [None] * (k_blocks + 1)
    for k in range(k_blocks + 1):
        g = int(seq.grid[k])
        frame = lpf_cocycle.frames[g]
        cs = frame.T @ seq.Es[k]
        u, _, _ = np.linalg.svd(cs, full_matrices=False)
        ns_b[k] = u[:, :d_ns]
        nu_b[k] = _ncu_coords(lpf_cocycle, seq, k, g, d_nu)
    for k in range(k_blocks):
        ga, gb = int(seq.grid[k]), int(seq.grid[k + 1])
        p, ls = scaled_product(lpf_cocycle.lpf_factors, ga, gb)
        p = p * np.exp(ls)
        ns_f[k] = ns_b[k + 1].T @ (p @ ns_b[k])
        nu_f[k] = nu_b[k + 1].T @ (p @ nu_b[k])

    # qualifying starts: forward window clear of the singular set
    qual = []
    for k in range(len(times)):
        t_end = times[k] + avoid_window
        if t_end > orbit.times[-1] + 1e-9:
            break
        g0 = int(seq.grid[k])
        g1 = int(np.searchsorted(orbit.times, t_end, side="right")) - 1
        if np.min(dist[g0:g1 + 1]) > radius:
            qual.append(k)
    n_qual = len(qual)

    if n_qual < 2:
        return MshResult(False, np.nan, np.nan, np.nan,
                         False, n_qual, radius, avoid_window,
                         details={"reason": "no qualifying windows"})

    spans = np.linspace(avoid_window / 10.0, avoid_window, 5)
    xs_s, ys_s, xs_u, ys_u, ys_d = [], [], [], [], []
    start_sample = [qual[i] for i in
                    np.linspace(0, n_qual - 1, min(n_starts, n_qual)).astype(int)]
    for k0 in start_sample:
        for span in spans:
            k1 = int(np.searchsorted(times, times[k0] + span, side="right")) - 1
            if k1 <= k0:
                continue
            dt = times[k1] - times[k0]
            ln_s = restricted_window_norm(ns_f, k0, k1)
            ln_u = restricted_window_norm(nu_f, k0, k1, inverse=True)
            xs_s.append(dt)
            ys_s.append(ln_s)
            xs_u.append(dt)
            ys_u.append(ln_u)
            ys_d.append(ln_s + ln_u)
    slope_s, _, _ = fit_log_rate(xs_s, ys_s)
    slope_u, _, _ = fit_log_rate(xs_u, ys_u)
    slope_d, _, _ = fit_log_rate(xs_s, ys_d)

    sing_ok = True
    details = {}
    if sing_analyses:
        for idx, sa in enumerate(sing_analyses):
            ok = bool(sa.lorenz_like and sa.splitting_dims
                      and sa.splitting_dims[0] == d_ns
                      and sa.splitting_dims[2] == d_nu)
            details[f"singularity_{idx}"] = {
                "lorenz_like": sa.lorenz_like,
                "dims_match": ok,
            }
            sing_ok = sing_ok and ok

    passed = bool(slope_s <= -RATE_MARGIN and slope_u <= -RATE_MARGIN
                  and slope_d <= -RATE_MARGIN and sing_ok)
    return MshResult(passed, float(slope_s), float(slope_u), float(slope_d),
                     sing_ok, n_qual, radius, avoid_window, details)


# ----------------------------------------------------------------------
# periodic-orbit nonuniform check
# ----------------------------------------------------------------------

@dataclass
class NushPeriodicResult:
    point: np.ndarray
    period: float
    residual: float
    e_average: float          # per-unit-time log norm on the stable side
    wedge_average: float      # per-unit-time log of the inverse compound norm
    passed: bool
    eta: float


def _refine_periodic(model, seed, period_guess, step_ctrl, residual=1e-10,
                     max_iter=60):
    """Single shooting with a phase condition; returns (point, period)."""
    x = np.asarray(seed, dtype=float)
    period = float(period_guess)
    v0 = model.eval(x)
    n = x.shape[0]
    for _ in range(max_iter):
        orbit = integrate(model, x, period, step_ctrl)
        x_t = orbit.states[-1]
        r = x_t - x
        if np.linalg.norm(r) < residual:
            return x, period, float(np.linalg.norm(r))
        m, ls = orbit.propagator(0, orbit.n_steps)
        m = m * np.exp(ls)
        jac = np.zeros((n + 1, n + 1))
        jac[:n, :n] = m - np.eye(n)
        jac[:n, n] = model.eval(x_t)
        jac[n, :n] = v0
        rhs = np.concatenate([-r, [0.0]])
        try:
            delta = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        improved = False
        base = np.linalg.norm(r)
        while lam > 1e-6:
            xn = x + lam * delta[:n]
            pn = period + lam * delta[n]
            if pn <= 0:
                lam *= 0.5
                continue
            rn = integrate(model, xn, pn, step_ctrl).states[-1] - xn
            if np.linalg.norm(rn) < base:
                x, period = xn, pn
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    orbit = integrate(model, x, period, step_ctrl)
    res = float(np.linalg.norm(orbit.states[-1] - x))
    if res >= residual:
        raise NotPeriodic(f"shooting stalled at residual {res:.3e}")
    return x, period, res


def _equilibrium_nush(model, sigma, tau, d_s):
    """Equilibrium clause: averages from the time-tau linearized map.

    The exponential is taken of the generator restricted to each
    invariant block, never of the full Jacobian, so the strongly
    expanding directions cannot contaminate the stable-side norm
    through roundoff.
    """
    from .util import expm_small

    j = model.jacobian(sigma)
    eigs, vecs = np.linalg.eig(j)
    order = np.argsort(eigs.real)
    eigs, vecs = eigs[order], vecs[:, order]

    def real_basis(cols):
        m = np.hstack([np.real(vecs[:, cols]), np.imag(vecs[:, cols])])
        q, r = np.linalg.qr(m)
        keep = np.abs(np.diag(r)) > 1e-12
        return q[:, keep]

    es = real_basis(list(range(d_s)))
    f = real_basis(list(range(d_s, len(eigs))))
    exp_e = expm_small(tau * (es.T @ j @ es))
    e_avg = float(np.log(np.linalg.norm(exp_e, 2)) / tau)
    exp_f = expm_small(tau * (f.T @ j @ f))
    w = wedge2_of(exp_f) if exp_f.shape[0] > 1 else exp_f
    sv = np.linalg.svd(w, compute_uv=False)
    wedge_avg = float(-np.log(sv[-1]) / tau)
    return e_avg, wedge_avg


def nush_periodic_check(model, seed, period_guess, tau: float = 1.0,
                        d_s: int = 1, eta: float = -0.05,
                        step_ctrl=None, max_iter: int = 60) -> NushPeriodicResult:
    """Period-averaged nonuniform hyperbolicity integrals on a closed orbit.

    Refines the orbit by shooting (residual < 1e-10), builds the
    invariant splitting from multi-period sweeps, and averages the
    time-tau restricted log norms around the orbit: the stable-side
    norm and the inverse norm of the second compound on the
    center-unstable side.  Both must be <= eta < 0 to pass.

    A seed within 1e-8 of an equilibrium is handled by the linearized
    time-tau map instead.
    """
    seed = np.asarray(seed, dtype=float)
    if np.linalg.norm(model.eval(seed)) <= 1e-8:
        e_avg, w_avg = _equilibrium_nush(model, seed, tau, d_s)
        return NushPeriodicResult(seed, 0.0, 0.0, e_avg, w_avg,
                                  bool(e_avg <= eta and w_avg <= eta), eta)

    ctrl = step_ctrl or StepControl()
    x, period, res = _refine_periodic(model, seed, period_guess, ctrl,
                                      max_iter=max_iter)
    # cover enough periods for the splitting sweeps to converge
    reps = max(4, int(np.ceil(3.0 * tau / period)) + 3)
    orbit = integrate(model, x, reps * period, ctrl)
    warmup = max(period, tau)
    seq = estimate_splitting(orbit, d_s=d_s, warmup=warmup, stride=2)

    rs, _ = seq.restricted("s")
    rcu, _ = seq.restricted("cu")
    times = seq.times
    t_last = times[-1] - tau
    starts = np.linspace(times[0], t_last, 64)
    evals, wvals = [], []
    for s0 in starts:
        i = int(np.searchsorted(times, s0, side="left"))
        j = int(np.searchsorted(times, times[i] + tau, side="right")) - 1
        if j <= i:
            continue
        span = times[j] - times[i]
        evals.append(restricted_window_norm(rs, i, j) / span)
        m, ls = _restricted_product(rcu, i, j)
        w = wedge2_of(m) if m.shape[0] > 1 else m
        sv = np.linalg.svd(w, compute_uv=False)
        wvals.append(-(np.log(sv[-1]) + 2 * ls) / span)
    e_avg, w_avg = float(np.mean(evals)), float(np.mean(wvals))
    return NushPeriodicResult(x, period, res, e_avg, w_avg,
                              bool(e_avg <= eta and w_avg <= eta), eta)


def __getattr__(name):
    # Report assembly lives in .report; re-exported lazily here as part
    # of this module's public surface (avoids a circular import).
    if name in ("assemble_report", "ConditionVerdict", "KNOWN_CONDITIONS"):
        from . import report
        return getattr(report, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
