"""Hot numeric loops, each with a numba and a pure-numpy implementation.

The public names at the bottom (``euler_events``, ``sample_segments``) are
bound to the numba versions unless numba is missing or the environment sets
``ETCONSENSUS_DISABLE_NUMBA=1``. Both versions are importable directly so
they can be compared against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    nb = None

USE_NUMBA = nb is not None and os.getenv("ETCONSENSUS_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")

_BISECT_ITERS = 60
_GROUP_TOL = 1e-12


def _njit(fn):
    if nb is None:
        return fn
    return nb.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# Fixed-step Euler reference integrator for the nominal hybrid system.
#
# Explicit Euler on (x, chi) with constant step dt. The error is affine
# between broadcasts and is evaluated in closed form from the last event
# instant. When a step would carry some clock to <= 0 while that agent's
# error is nonzero, the crossing is localised by bisection on the fraction of
# the step, every agent is advanced to that instant and the crossing agents
# broadcast.
# ---------------------------------------------------------------------------


def _sums_py(xhat, src, dst, w, n):
    diff = xhat[src] - xhat[dst]
    zhat = np.bincount(src, weights=w * diff, minlength=n)
    phihat = np.bincount(src, weights=w * diff * diff, minlength=n)
    return zhat, phihat


def _euler_events_nb(x0, xhat0, chi0, src, dst, w, sigma, horizon, dt, e_tol, max_events, max_groups):
    n = x0.size
    x = x0.copy()  # value at t_base; the error is rebuilt from it each step
    xhat = xhat0.copy()
    chi = chi0.copy()
    zhat = np.zeros(n)
    phihat = np.zeros(n)
    e0 = np.zeros(n)
    gam = np.zeros(n)
    theta = np.empty(n)
    ev_t = np.empty(max_events)
    ev_a = np.empty(max_events, dtype=np.int64)
    count = 0
    groups = 0
    t_base = 0.0
    k = 0
    refresh = True
    while groups < max_groups:
        if refresh:
            for i in range(n):
                zhat[i] = 0.0
                phihat[i] = 0.0
            for m in range(src.size):
                diff = xhat[src[m]] - xhat[dst[m]]
                zhat[src[m]] += w[m] * diff
                phihat[src[m]] += w[m] * diff * diff
            for i in range(n):
                e0[i] = x[i] - xhat[i]
            refresh = False
        t = t_base + k * dt
        if t >= horizon:
            break
        theta_min = 2.0
        for i in range(n):
            # affine error evaluated directly, so rounding does not build up over steps
            e = e0[i] - k * dt * zhat[i]
            gam[i] = sigma[i] * phihat[i] + 2.0 * e * zhat[i]
            theta[i] = 2.0
            if chi[i] + dt * gam[i] <= 0.0 and abs(e - dt * zhat[i]) > e_tol:
                lo = 0.0
                hi = 1.0
                for _ in range(_BISECT_ITERS):
                    mid = 0.5 * (lo + hi)
                    if chi[i] + mid * dt * gam[i] <= 0.0 and abs(e - mid * dt * zhat[i]) > e_tol:
                        hi = mid
                    else:
                        lo = mid
                theta[i] = hi
                if hi < theta_min:
                    theta_min = hi
        if theta_min > 1.0:
            for i in range(n):
                chi[i] += dt * gam[i]
            k += 1
            continue
        s = theta_min * dt
        for i in range(n):
            x[i] -= (k * dt + s) * zhat[i]
            chi[i] += s * gam[i]
        t_ev = t + s
        for i in range(n):
            if (theta[i] - theta_min) * dt <= _GROUP_TOL:
                if count < max_events:
                    ev_t[count] = t_ev
                    ev_a[count] = i
                count += 1
                xhat[i] = x[i]
                if chi[i] < 0.0:
                    chi[i] = 0.0
        t_base = t_ev
        k = 0
        groups += 1
        refresh = True
    m = min(count, max_events)
    return ev_t[:m], ev_a[:m], count


def euler_events_numpy(x0, xhat0, chi0, src, dst, w, sigma, horizon, dt, e_tol, max_events, max_groups, chunk=1 << 16):
    """Numpy twin of the numba Euler reference integrator.

    Event-free stretches are integrated a chunk of steps at a time with
    ``cumsum``; the error is affine in the step index, so the clock update is a
    running sum of an affine sequence.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    x = x0.copy()
    xhat = np.array(xhat0, dtype=float)
    chi = np.array(chi0, dtype=float)
    ev_t: list[float] = []
    ev_a: list[int] = []
    t_base = 0.0
    groups = 0
    while t_base < horizon and groups < max_groups:
        zhat, phihat = _sums_py(xhat, src, dst, w, n)
        e0 = x - xhat
        k0 = 0
        fired = False
        while t_base + k0 * dt < horizon:
            kk = min(chunk, int(np.ceil((horizon - t_base) / dt)) - k0 + 1)
            kk = max(kk, 1)
            m = np.arange(k0, k0 + kk)
            e_m = e0[:, None] - (m * dt)[None, :] * zhat[:, None]  # error at step start
            g = sigma[:, None] * phihat[:, None] + 2.0 * e_m * zhat[:, None]
            chi_after = chi[:, None] + dt * np.cumsum(g, axis=1)
            e_after = e_m - dt * zhat[:, None]
            hit = (chi_after <= 0.0) & (np.abs(e_after) > e_tol)
            # drop steps that start at or beyond the horizon
            hit &= (t_base + m * dt < horizon)[None, :]
            cols = np.flatnonzero(hit.any(axis=0))
            if cols.size == 0:
                chi = chi_after[:, -1].copy()
                k0 += kk
                continue
            c = int(cols[0])
            chi_start = chi.copy() if c == 0 else chi_after[:, c - 1].copy()
            e_start = e_m[:, c]
            g_c = g[:, c]
            theta = np.full(n, 2.0)
            for i in np.flatnonzero(hit[:, c]):
                lo, hi = 0.0, 1.0
                for _ in range(_BISECT_ITERS):
                    mid = 0.5 * (lo + hi)
                    if chi_start[i] + mid * dt * g_c[i] <= 0.0 and abs(e_start[i] - mid * dt * zhat[i]) > e_tol:
                        hi = mid
                    else:
                        lo = mid
                theta[i] = hi
            th = theta.min()
            s = th * dt
            t_step = t_base + (k0 + c) * dt
            x = x - ((k0 + c) * dt + s) * zhat
            chi = chi_start + s * g_c
            t_ev = t_step + s
            for i in range(n):
                if (theta[i] - th) * dt <= _GROUP_TOL:
                    ev_t.append(t_ev)
                    ev_a.append(i)
                    xhat[i] = x[i]
                    chi[i] = max(chi[i], 0.0)
            t_base = t_ev
            groups += 1
            fired = True
            break
        if not fired:
            break
    count = len(ev_t)
    return np.array(ev_t[:max_events]), np.array(ev_a[:max_events], dtype=np.int64), count


# ---------------------------------------------------------------------------
# Dense reconstruction of piecewise closed-form flows.
# ---------------------------------------------------------------------------


def _sample_segments_nb(seg_t, seg_x, seg_xhat, seg_chi, seg_timer, seg_zhat, seg_b, ts):
    m = ts.size
    n = seg_x.shape[1]
    x = np.empty((m, n))
    xhat = np.empty((m, n))
    chi = np.empty((m, n))
    timer = np.empty((m, n))
    k = 0
    nseg = seg_t.size
    for r in range(m):
        t = ts[r]
        while k + 1 < nseg and seg_t[k + 1] <= t:
            k += 1
        s = t - seg_t[k]
        for i in range(n):
            z = seg_zhat[k, i]
            x[r, i] = seg_x[k, i] - z * s
            xhat[r, i] = seg_xhat[k, i]
            chi[r, i] = seg_chi[k, i] + seg_b[k, i] * s - z * z * s * s
            timer[r, i] = seg_timer[k, i] + s
    return x, xhat, chi, timer


def sample_segments_numpy(seg_t, seg_x, seg_xhat, seg_chi, seg_timer, seg_zhat, seg_b, ts):
    """Evaluate the piecewise closed-form flow at sorted times ``ts``."""
    idx = np.searchsorted(seg_t, ts, side="right") - 1
    idx = np.clip(idx, 0, seg_t.size - 1)
    s = (ts - seg_t[idx])[:, None]
    z = seg_zhat[idx]
    x = seg_x[idx] - z * s
    chi = seg_chi[idx] + seg_b[idx] * s - z * z * s * s
    return x, seg_xhat[idx].copy(), chi, seg_timer[idx] + s


if nb is not None:
    euler_events_numba = _njit(_euler_events_nb)
    sample_segments_numba = _njit(_sample_segments_nb)
else:  # pragma: no cover
    euler_events_numba = None
    sample_segments_numba = None


def euler_events(x0, src, dst, w, sigma, horizon, dt, e_tol, xhat0=None, chi0=None, max_events=1_000_000, max_groups=None):
    """Event times and agents of the Euler reference, starting at time 0 from ``(x0, xhat0, chi0)``.

    ``xhat0`` defaults to ``x0`` and ``chi0`` to zeros; integration stops at
    ``horizon`` or after ``max_groups`` distinct event instants.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    args = (
        x0,
        np.ascontiguousarray(x0 if xhat0 is None else xhat0, dtype=np.float64),
        np.ascontiguousarray(np.zeros_like(x0) if chi0 is None else chi0, dtype=np.float64),
        np.ascontiguousarray(src, dtype=np.int64),
        np.ascontiguousarray(dst, dtype=np.int64),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(sigma, dtype=np.float64),
        float(horizon),
        float(dt),
        float(e_tol),
        int(max_events),
        int(2**62 if max_groups is None else max_groups),
    )
    if USE_NUMBA:
        return euler_events_numba(*args)
    return euler_events_numpy(*args)


def sample_segments(seg_t, seg_x, seg_xhat, seg_chi, seg_timer, seg_zhat, seg_b, ts):
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (seg_t, seg_x, seg_xhat, seg_chi, seg_timer, seg_zhat, seg_b, ts)]
    if USE_NUMBA:
        return sample_segments_numba(*args)
    return sample_segments_numpy(*args)
