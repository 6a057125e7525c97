"""Compiled inner loops (numba).

Everything here is an implementation detail behind the public modules:
exact event-driven simulation, the fixed-step RK4 integrator, and the
Metropolis-within-Gibbs sweep kernels.  All randomness comes from an explicit
splitmix64 counter passed in as a 64-bit seed, so results are bit-reproducible
and kernels can run concurrently on threads (``nogil=True``).

The likelihood arithmetic duplicated here is cross-checked against the pure
NumPy reference implementations in :mod:`plasticity.likelihood` by the test
suite; keep the operation order identical when editing either side.
"""

import math

import numpy as np
from numba import njit

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586


@njit(cache=True, nogil=True, inline="always")
def _next_u01(state):
    """Advance splitmix64; return (state, uniform in [0, 1))."""
    state = state + _SM64_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _SM64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MIX2
    z = z ^ (z >> np.uint64(31))
    return state, float(z >> np.uint64(11)) * _INV_2_53


@njit(cache=True, nogil=True, inline="always")
def _heun(mu, s2, nk, nk1, dt, al, be, l1, l2):
    """One predictor/corrector step of the moment system.

    Returns the averaged next-step mean A and variance Sigma; Sigma <= 0
    flags a step too coarse for the variance recursion.
    """
    fa = l2 - l1
    fb = l1 * al - l2 * (1.0 + be)
    fc = l2 * be
    ga = 2.0 * (l1 * al - l2 * be) - (l1 + l2)
    mu_hat = mu + dt * ((fa * mu + fb) * mu + fc)
    s_hat = s2 + dt * (ga * s2 + 2.0 * fa * mu * s2
                       + ((l1 - l2) * mu + l2) / (2.0 * nk))
    mu_bar = mu + dt * ((fa * mu_hat + fb) * mu_hat + fc)
    s_bar = s2 + dt * (ga * s_hat + 2.0 * fa * mu_hat * s_hat
                       + ((l1 - l2) * mu_hat + l2) / (2.0 * nk1))
    return 0.5 * (mu_hat + mu_bar), 0.5 * (s_hat + s_bar)


@njit(cache=True, nogil=True, inline="always")
def _logterm_summary(mp, vp, mn, vn, nk, nk1, dt, al, be, l1, l2, n, lgam_c):
    """Log density of one (mean, variance) transition.

    Normal(mn; A, Sigma/n) times the scaled chi-square(n-1) law of vn.
    Support violations are encoded as -inf, never raised.
    """
    a, sig = _heun(mp, vp, nk, nk1, dt, al, be, l1, l2)
    if sig <= 0.0 or not math.isfinite(sig):
        return -np.inf
    ll = 0.5 * math.log(n / (_TWO_PI * sig)) - 0.5 * n * (mn - a) ** 2 / sig
    hn1 = 0.5 * (n - 1.0)
    if vn > 0.0:
        ll += (hn1 * math.log((n - 1.0) / (2.0 * sig))
               + (hn1 - 1.0) * math.log(vn) - lgam_c
               - 0.5 * (n - 1.0) * vn / sig)
    elif n > 3:
        return -np.inf
    elif n == 3:
        ll += hn1 * math.log((n - 1.0) / (2.0 * sig)) - lgam_c
    else:
        # n = 2: the v^{-1/2} factor diverges (integrably) at zero
        return np.inf
    return ll


@njit(cache=True, nogil=True, inline="always")
def _logterm_trajectory(rp, rn, nk, nk1, dt, al, be, l1, l2):
    """Log density of one single-trajectory transition (variance plug-in 0)."""
    a, sig = _heun(rp, 0.0, nk, nk1, dt, al, be, l1, l2)
    if sig <= 0.0 or not math.isfinite(sig):
        return -np.inf
    return -0.5 * math.log(_TWO_PI * sig) - 0.5 * (rn - a) ** 2 / sig


@njit(cache=True, nogil=True, inline="always")
def _npoint(s, m, times, left_idx, base_trap, l1, l2, n0):
    """Population size at refined grid point ``s`` via the mean constraint.

    ``base_trap[s]`` carries the trapezoid sum over whole observed intervals
    up to the governing observed point ``left_idx[s]``; the remaining partial
    trapezoid uses the (possibly latent) mean at ``s`` itself.
    """
    li = left_idx[s]
    partial = 0.5 * (m[li] + m[s]) * (times[s] - times[li])
    return n0 * math.exp((l1 - l2) * (base_trap[s] + partial)
                         + l2 * (times[s] - times[0]))


@njit(cache=True, nogil=True)
def _full_loglik_summary(times, m, v, left_idx, base_trap, theta,
                         n, n0, lgam_c, npath, terms):
    al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
    p = times.size
    for s in range(p):
        npath[s] = _npoint(s, m, times, left_idx, base_trap, l1, l2, n0)
    total = 0.0
    for s in range(p - 1):
        term = _logterm_summary(m[s], v[s], m[s + 1], v[s + 1],
                                npath[s], npath[s + 1],
                                times[s + 1] - times[s],
                                al, be, l1, l2, n, lgam_c)
        terms[s] = term
        total += term
    return total


@njit(cache=True, nogil=True)
def _full_loglik_trajectory(times, r, left_idx, base_trap, theta, n0,
                            npath, terms):
    al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
    ntraj = r.shape[0]
    p = times.size
    total = 0.0
    for i in range(ntraj):
        for s in range(p):
            npath[i, s] = _npoint(s, r[i], times, left_idx, base_trap[i],
                                  l1, l2, n0)
        for s in range(p - 1):
            term = _logterm_trajectory(r[i, s], r[i, s + 1],
                                       npath[i, s], npath[i, s + 1],
                                       times[s + 1] - times[s],
                                       al, be, l1, l2)
            terms[i, s] = term
            total += term
    return total


@njit(cache=True, nogil=True, inline="always")
def _sum1(arr):
    tot = 0.0
    for i in range(arr.size):
        tot += arr[i]
    return tot


@njit(cache=True, nogil=True, inline="always")
def _sum2(arr):
    tot = 0.0
    for i in range(arr.shape[0]):
        for j in range(arr.shape[1]):
            tot += arr[i, j]
    return tot


@njit(cache=True, nogil=True, inline="always")
def _mh_accept(state, new, old):
    """Metropolis rule, -inf safe.  Returns (state, accept_flag)."""
    if new == -np.inf or math.isnan(new):
        return state, False
    if old == -np.inf:
        return state, True
    state, u = _next_u01(state)
    return state, math.log(1.0 - u) < new - old


@njit(cache=True, nogil=True, inline="always")
def _two_normals(state):
    """Box-Muller pair."""
    state, u1 = _next_u01(state)
    state, u2 = _next_u01(state)
    rad = math.sqrt(-2.0 * math.log(1.0 - u1))
    ang = _TWO_PI * u2
    return state, rad * math.cos(ang), rad * math.sin(ang)


@njit(cache=True, nogil=True)
def _chol4(a, out):
    """Cholesky of a 4x4 SPD matrix into ``out``; returns False if not SPD."""
    for i in range(4):
        for j in range(4):
            out[i, j] = 0.0
    for i in range(4):
        for j in range(i + 1):
            acc = a[i, j]
            for k in range(j):
                acc -= out[i, k] * out[j, k]
            if i == j:
                if acc <= 0.0:
                    return False
                out[i, i] = math.sqrt(acc)
            else:
                out[i, j] = acc / out[j, j]
    return True


@njit(cache=True, nogil=True, inline="always")
def _joint_proposal(state, theta, theta_s, chol, free, tie, lo, hi, scale):
    """theta_s := theta + scale * L z on the free coordinates.

    Returns (state, in_support); constrained coordinates follow their ties.
    Out-of-box proposals are rejected by the caller (flat prior indicator).
    """
    state, z0, z1 = _two_normals(state)
    state, z2, z3 = _two_normals(state)
    z = (z0, z1, z2, z3)
    ok = True
    for i in range(4):
        step = 0.0
        for k in range(4):
            step += chol[i, k] * z[k]
        theta_s[i] = theta[i] + scale * step if free[i] else theta[i]
    if tie:
        theta_s[3] = theta_s[2]
    for i in range(4):
        if theta_s[i] < lo[i] or theta_s[i] > hi[i]:
            ok = False
        if i >= 2 and theta_s[i] <= 0.0:
            ok = False
    return state, ok


@njit(cache=True, nogil=True)
def run_summary_chain(times, m, v, miss_idx, left_idx, base_trap,
                      theta, free, tie, lo, hi,
                      n, n0, iterations, burn, seed, prior_only,
                      v_floor, tune_target, tune_rate, n_global, scales,
                      samples, logposts, accepts, proposals,
                      m_mis_mean, v_mis_mean, logprior_const, check_every):
    """One Metropolis-within-Gibbs chain on summary data.

    Mutates ``theta``, ``m``/``v`` (latent entries), ``scales`` and the output
    arrays in place; returns the largest deviation between the incrementally
    maintained log likelihood and a from-scratch recomputation, checked every
    ``check_every`` sweeps.
    """
    p = times.size
    nmis = miss_idx.size
    lgam_c = math.lgamma(0.5 * (n - 1.0))
    npath = np.empty(p)
    terms = np.empty(p - 1)
    npath_s = np.empty(p)
    terms_s = np.empty(p - 1)
    theta_s = np.empty(4)
    state = seed

    if prior_only:
        ll = 0.0
    else:
        ll = _full_loglik_summary(times, m, v, left_idx, base_trap, theta,
                                  n, n0, lgam_c, npath, terms)
    max_drift = 0.0
    kept = 0
    nsites = scales.size
    # burn-in-adapted joint move state (frozen once burn-in ends)
    wcount = 0
    wmean = np.zeros(4)
    wm2 = np.zeros((4, 4))
    wdelta = np.empty(4)
    cov = np.zeros((4, 4))
    chol = np.zeros((4, 4))
    have_chol = False
    jscale = 1.0
    for it in range(iterations):
        tuning = it < burn
        al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]

        # joint random walk along the covariance learned during burn-in;
        # every fourth move jumps at 4x scale to traverse long ridges
        if have_chol:
            jmul = 4.0 if it % 4 == 3 else 1.0
            state, ok = _joint_proposal(state, theta, theta_s, chol, free,
                                        tie, lo, hi, jscale * jmul)
            if ok:
                if prior_only:
                    ll_s = 0.0
                else:
                    ll_s = _full_loglik_summary(times, m, v, left_idx,
                                                base_trap, theta_s, n, n0,
                                                lgam_c, npath_s, terms_s)
                state, accept = _mh_accept(state, ll_s, ll)
                if accept:
                    for q in range(4):
                        theta[q] = theta_s[q]
                    al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
                    for s in range(p):
                        npath[s] = npath_s[s]
                    for s in range(p - 1):
                        terms[s] = terms_s[s]
                    ll = ll_s
                if tuning:
                    if jmul == 1.0:
                        jscale *= math.exp(
                            tune_rate * ((1.0 if accept else 0.0)
                                         - tune_target))
                        jscale = min(max(jscale, 1e-3), 50.0)
                else:
                    proposals[nsites + 1] += 1.0
                    if accept:
                        accepts[nsites + 1] += 1.0

        # independence moves: fresh prior draws for the free parameters let
        # chains hop between distant posterior basins (each is a valid MH
        # kernel, so repeating it preserves the target)
        for _ in range(n_global):
            for q in range(4):
                theta_s[q] = theta[q]
            for pi in range(4):
                state, u = _next_u01(state)
                if free[pi]:
                    theta_s[pi] = lo[pi] + u * (hi[pi] - lo[pi])
            if tie:
                theta_s[3] = theta_s[2]
            if theta_s[2] <= 0.0 or theta_s[3] <= 0.0:
                continue
            if prior_only:
                ll_s = 0.0
            else:
                ll_s = _full_loglik_summary(times, m, v, left_idx, base_trap,
                                            theta_s, n, n0, lgam_c,
                                            npath_s, terms_s)
            state, accept = _mh_accept(state, ll_s, ll)
            if accept:
                for q in range(4):
                    theta[q] = theta_s[q]
                al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
                for s in range(p):
                    npath[s] = npath_s[s]
                for s in range(p - 1):
                    terms[s] = terms_s[s]
                ll = ll_s
            if not tuning:
                proposals[nsites] += 1.0
                if accept:
                    accepts[nsites] += 1.0

        for pi in range(4):
            if not free[pi]:
                continue
            state, u = _next_u01(state)
            prop = theta[pi] + (2.0 * u - 1.0) * scales[pi]
            if prop < lo[pi]:
                prop = 2.0 * lo[pi] - prop
            elif prop > hi[pi]:
                prop = 2.0 * hi[pi] - prop
            if pi >= 2 and prop <= 0.0:
                continue
            for q in range(4):
                theta_s[q] = theta[q]
            theta_s[pi] = prop
            if tie and pi == 2:
                theta_s[3] = prop
            if prior_only:
                ll_s = 0.0
            else:
                ll_s = _full_loglik_summary(times, m, v, left_idx, base_trap,
                                            theta_s, n, n0, lgam_c,
                                            npath_s, terms_s)
            state, accept = _mh_accept(state, ll_s, ll)
            if accept:
                theta[pi] = prop
                if tie and pi == 2:
                    theta[3] = prop
                al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
                for s in range(p):
                    npath[s] = npath_s[s]
                for s in range(p - 1):
                    terms[s] = terms_s[s]
                ll = ll_s
            if tuning:
                step = tune_rate * ((1.0 if accept else 0.0) - tune_target)
                scales[pi] *= math.exp(step)
                width = hi[pi] - lo[pi]
                if scales[pi] > width:
                    scales[pi] = width
                elif scales[pi] < 1e-7:
                    scales[pi] = 1e-7
            else:
                proposals[pi] += 1.0
                if accept:
                    accepts[pi] += 1.0

        for ji in range(nmis):
            jj = miss_idx[ji]
            dt_in = times[jj] - times[jj - 1]
            dt_out = times[jj + 1] - times[jj]

            # latent mean, reflected into [0, 1]
            si = 4 + 2 * ji
            state, u = _next_u01(state)
            prop = m[jj] + (2.0 * u - 1.0) * scales[si]
            if prop < 0.0:
                prop = -prop
            elif prop > 1.0:
                prop = 2.0 - prop
            li = left_idx[jj]
            partial = 0.5 * (m[li] + prop) * (times[jj] - times[li])
            nj = n0 * math.exp((l1 - l2) * (base_trap[jj] + partial)
                               + l2 * (times[jj] - times[0]))
            t_in = _logterm_summary(m[jj - 1], v[jj - 1], prop, v[jj],
                                    npath[jj - 1], nj, dt_in,
                                    al, be, l1, l2, n, lgam_c)
            t_out = _logterm_summary(prop, v[jj], m[jj + 1], v[jj + 1],
                                     nj, npath[jj + 1], dt_out,
                                     al, be, l1, l2, n, lgam_c)
            old = terms[jj - 1] + terms[jj]
            new = t_in + t_out
            state, accept = _mh_accept(state, new, old)
            if accept:
                m[jj] = prop
                npath[jj] = nj
                terms[jj - 1] = t_in
                terms[jj] = t_out
                if math.isfinite(ll) and math.isfinite(new) and math.isfinite(old):
                    ll += new - old
                else:
                    ll = _sum1(terms)
            if tuning:
                step = tune_rate * ((1.0 if accept else 0.0) - tune_target)
                scales[si] *= math.exp(step)
                if scales[si] > 1.0:
                    scales[si] = 1.0
                elif scales[si] < 1e-7:
                    scales[si] = 1e-7
            else:
                proposals[si] += 1.0
                if accept:
                    accepts[si] += 1.0

            # latent variance, reflected at the floor
            si += 1
            state, u = _next_u01(state)
            prop = v[jj] + (2.0 * u - 1.0) * scales[si]
            if prop < v_floor:
                prop = 2.0 * v_floor - prop
            t_in = _logterm_summary(m[jj - 1], v[jj - 1], m[jj], prop,
                                    npath[jj - 1], npath[jj], dt_in,
                                    al, be, l1, l2, n, lgam_c)
            t_out = _logterm_summary(m[jj], prop, m[jj + 1], v[jj + 1],
                                     npath[jj], npath[jj + 1], dt_out,
                                     al, be, l1, l2, n, lgam_c)
            old = terms[jj - 1] + terms[jj]
            new = t_in + t_out
            state, accept = _mh_accept(state, new, old)
            if accept:
                v[jj] = prop
                terms[jj - 1] = t_in
                terms[jj] = t_out
                if math.isfinite(ll) and math.isfinite(new) and math.isfinite(old):
                    ll += new - old
                else:
                    ll = _sum1(terms)
            if tuning:
                step = tune_rate * ((1.0 if accept else 0.0) - tune_target)
                scales[si] *= math.exp(step)
                if scales[si] > 1.0:
                    scales[si] = 1.0
                elif scales[si] < 1e-7:
                    scales[si] = 1e-7
            else:
                proposals[si] += 1.0
                if accept:
                    accepts[si] += 1.0

        if tuning:
            # second half of burn-in feeds the joint-move covariance
            if it == burn // 2:
                wcount = 0
                for q in range(4):
                    wmean[q] = 0.0
                    for q2 in range(4):
                        wm2[q, q2] = 0.0
            wcount += 1
            for q in range(4):
                wdelta[q] = theta[q] - wmean[q]
                wmean[q] += wdelta[q] / wcount
            for q in range(4):
                d2 = theta[q] - wmean[q]
                for q2 in range(4):
                    wm2[q2, q] += wdelta[q2] * d2
            if wcount >= 200 and (wcount % 500 == 0 or it == burn - 1):
                for q in range(4):
                    for q2 in range(4):
                        cov[q, q2] = wm2[q, q2] / (wcount - 1)
                    cov[q, q] += 1e-12 + 1e-6 * cov[q, q]
                have_chol = _chol4(cov, chol)

        if it >= burn:
            for q in range(4):
                samples[kept, q] = theta[q]
            logposts[kept] = ll + logprior_const
            for ji in range(nmis):
                m_mis_mean[ji] += m[miss_idx[ji]]
                v_mis_mean[ji] += v[miss_idx[ji]]
            kept += 1

        if not prior_only and check_every > 0 and (it + 1) % check_every == 0:
            ll_fresh = _full_loglik_summary(times, m, v, left_idx, base_trap,
                                            theta, n, n0, lgam_c,
                                            npath_s, terms_s)
            if ll_fresh == -np.inf and ll == -np.inf:
                drift = 0.0
            else:
                drift = abs(ll_fresh - ll)
            if drift > max_drift:
                max_drift = drift

    if kept > 0:
        for ji in range(nmis):
            m_mis_mean[ji] /= kept
            v_mis_mean[ji] /= kept
    return max_drift


@njit(cache=True, nogil=True)
def run_trajectory_chain(times, r, miss_idx, left_idx, base_trap,
                         theta, free, tie, lo, hi,
                         n0, iterations, burn, seed,
                         tune_target, tune_rate, n_global, scales,
                         samples, logposts, accepts, proposals,
                         r_mis_mean, logprior_const, check_every):
    """Metropolis-within-Gibbs chain on per-trajectory proportion data."""
    ntraj = r.shape[0]
    p = times.size
    nmis = miss_idx.size
    npath = np.empty((ntraj, p))
    terms = np.empty((ntraj, p - 1))
    npath_s = np.empty((ntraj, p))
    terms_s = np.empty((ntraj, p - 1))
    theta_s = np.empty(4)
    state = seed

    ll = _full_loglik_trajectory(times, r, left_idx, base_trap, theta, n0,
                                 npath, terms)
    max_drift = 0.0
    kept = 0
    nsites = scales.size
    wcount = 0
    wmean = np.zeros(4)
    wm2 = np.zeros((4, 4))
    wdelta = np.empty(4)
    cov = np.zeros((4, 4))
    chol = np.zeros((4, 4))
    have_chol = False
    jscale = 1.0
    for it in range(iterations):
        tuning = it < burn
        al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]

        if have_chol:
            jmul = 4.0 if it % 4 == 3 else 1.0
            state, ok = _joint_proposal(state, theta, theta_s, chol, free,
                                        tie, lo, hi, jscale * jmul)
            if ok:
                ll_s = _full_loglik_trajectory(times, r, left_idx, base_trap,
                                               theta_s, n0, npath_s, terms_s)
                state, accept = _mh_accept(state, ll_s, ll)
                if accept:
                    for q in range(4):
                        theta[q] = theta_s[q]
                    al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
                    for i in range(ntraj):
                        for s in range(p):
                            npath[i, s] = npath_s[i, s]
                        for s in range(p - 1):
                            terms[i, s] = terms_s[i, s]
                    ll = ll_s
                if tuning:
                    if jmul == 1.0:
                        jscale *= math.exp(
                            tune_rate * ((1.0 if accept else 0.0)
                                         - tune_target))
                        jscale = min(max(jscale, 1e-3), 50.0)
                else:
                    proposals[nsites + 1] += 1.0
                    if accept:
                        accepts[nsites + 1] += 1.0

        for _ in range(n_global):
            for q in range(4):
                theta_s[q] = theta[q]
            for pi in range(4):
                state, u = _next_u01(state)
                if free[pi]:
                    theta_s[pi] = lo[pi] + u * (hi[pi] - lo[pi])
            if tie:
                theta_s[3] = theta_s[2]
            if theta_s[2] <= 0.0 or theta_s[3] <= 0.0:
                continue
            ll_s = _full_loglik_trajectory(times, r, left_idx, base_trap,
                                           theta_s, n0, npath_s, terms_s)
            state, accept = _mh_accept(state, ll_s, ll)
            if accept:
                for q in range(4):
                    theta[q] = theta_s[q]
                al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
                for i in range(ntraj):
                    for s in range(p):
                        npath[i, s] = npath_s[i, s]
                    for s in range(p - 1):
                        terms[i, s] = terms_s[i, s]
                ll = ll_s
            if not tuning:
                proposals[nsites] += 1.0
                if accept:
                    accepts[nsites] += 1.0

        for pi in range(4):
            if not free[pi]:
                continue
            state, u = _next_u01(state)
            prop = theta[pi] + (2.0 * u - 1.0) * scales[pi]
            if prop < lo[pi]:
                prop = 2.0 * lo[pi] - prop
            elif prop > hi[pi]:
                prop = 2.0 * hi[pi] - prop
            if pi >= 2 and prop <= 0.0:
                continue
            for q in range(4):
                theta_s[q] = theta[q]
            theta_s[pi] = prop
            if tie and pi == 2:
                theta_s[3] = prop
            ll_s = _full_loglik_trajectory(times, r, left_idx, base_trap,
                                           theta_s, n0, npath_s, terms_s)
            state, accept = _mh_accept(state, ll_s, ll)
            if accept:
                theta[pi] = prop
                if tie and pi == 2:
                    theta[3] = prop
                al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
                for i in range(ntraj):
                    for s in range(p):
                        npath[i, s] = npath_s[i, s]
                    for s in range(p - 1):
                        terms[i, s] = terms_s[i, s]
                ll = ll_s
            if tuning:
                step = tune_rate * ((1.0 if accept else 0.0) - tune_target)
                scales[pi] *= math.exp(step)
                width = hi[pi] - lo[pi]
                if scales[pi] > width:
                    scales[pi] = width
                elif scales[pi] < 1e-7:
                    scales[pi] = 1e-7
            else:
                proposals[pi] += 1.0
                if accept:
                    accepts[pi] += 1.0

        for i in range(ntraj):
            for ji in range(nmis):
                jj = miss_idx[ji]
                si = 4 + i * nmis + ji
                dt_in = times[jj] - times[jj - 1]
                dt_out = times[jj + 1] - times[jj]
                state, u = _next_u01(state)
                prop = r[i, jj] + (2.0 * u - 1.0) * scales[si]
                if prop < 0.0:
                    prop = -prop
                elif prop > 1.0:
                    prop = 2.0 - prop
                li = left_idx[jj]
                partial = 0.5 * (r[i, li] + prop) * (times[jj] - times[li])
                nj = n0 * math.exp((l1 - l2) * (base_trap[i, jj] + partial)
                                   + l2 * (times[jj] - times[0]))
                t_in = _logterm_trajectory(r[i, jj - 1], prop,
                                           npath[i, jj - 1], nj, dt_in,
                                           al, be, l1, l2)
                t_out = _logterm_trajectory(prop, r[i, jj + 1],
                                            nj, npath[i, jj + 1], dt_out,
                                            al, be, l1, l2)
                old = terms[i, jj - 1] + terms[i, jj]
                new = t_in + t_out
                state, accept = _mh_accept(state, new, old)
                if accept:
                    r[i, jj] = prop
                    npath[i, jj] = nj
                    terms[i, jj - 1] = t_in
                    terms[i, jj] = t_out
                    if math.isfinite(ll) and math.isfinite(new) and math.isfinite(old):
                        ll += new - old
                    else:
                        ll = _sum2(terms)
                if tuning:
                    step = tune_rate * ((1.0 if accept else 0.0) - tune_target)
                    scales[si] *= math.exp(step)
                    if scales[si] > 1.0:
                        scales[si] = 1.0
                    elif scales[si] < 1e-7:
                        scales[si] = 1e-7
                else:
                    proposals[si] += 1.0
                    if accept:
                        accepts[si] += 1.0

        if tuning:
            if it == burn // 2:
                wcount = 0
                for q in range(4):
                    wmean[q] = 0.0
                    for q2 in range(4):
                        wm2[q, q2] = 0.0
            wcount += 1
            for q in range(4):
                wdelta[q] = theta[q] - wmean[q]
                wmean[q] += wdelta[q] / wcount
            for q in range(4):
                d2 = theta[q] - wmean[q]
                for q2 in range(4):
                    wm2[q2, q] += wdelta[q2] * d2
            if wcount >= 200 and (wcount % 500 == 0 or it == burn - 1):
                for q in range(4):
                    for q2 in range(4):
                        cov[q, q2] = wm2[q, q2] / (wcount - 1)
                    cov[q, q] += 1e-12 + 1e-6 * cov[q, q]
                have_chol = _chol4(cov, chol)

        if it >= burn:
            for q in range(4):
                samples[kept, q] = theta[q]
            logposts[kept] = ll + logprior_const
            for i in range(ntraj):
                for ji in range(nmis):
                    r_mis_mean[i, ji] += r[i, miss_idx[ji]]
            kept += 1

        if check_every > 0 and (it + 1) % check_every == 0:
            ll_fresh = _full_loglik_trajectory(times, r, left_idx, base_trap,
                                               theta, n0, npath_s, terms_s)
            if ll_fresh == -np.inf and ll == -np.inf:
                drift = 0.0
            else:
                drift = abs(ll_fresh - ll)
            if drift > max_drift:
                max_drift = drift

    if kept > 0:
        for i in range(ntraj):
            for ji in range(nmis):
                r_mis_mean[i, ji] /= kept
    return max_drift


@njit(cache=True, nogil=True)
def loglik_for_thetas(thetas, times, m, v, left_idx, base_trap, n, n0):
    """Summary-data log likelihood for a batch of parameter vectors."""
    p = times.size
    lgam_c = math.lgamma(0.5 * (n - 1.0))
    npath = np.empty(p)
    terms = np.empty(p - 1)
    out = np.empty(thetas.shape[0])
    for t in range(thetas.shape[0]):
        out[t] = _full_loglik_summary(times, m, v, left_idx, base_trap,
                                      thetas[t], n, n0, lgam_c, npath, terms)
    return out


@njit(cache=True, nogil=True)
def gillespie_trajectory(x0, y0, al, be, l1, l2, grid, seed):
    """Exact event-driven simulation of the two-type birth process.

    Records the state holding at each grid time (last event at or before the
    grid point).  Returns (x_counts, y_counts) as int64 arrays.
    """
    p = grid.size
    out_x = np.empty(p, np.int64)
    out_y = np.empty(p, np.int64)
    x = x0
    y = y0
    t = 0.0
    gi = 0
    state = seed
    rx_coef1 = l1 * al          # stem symmetric -> +1 stem
    rx_coef2 = l2 * be          # non-stem de-differentiation -> +1 stem
    while gi < p:
        rate_x = rx_coef1 * x + rx_coef2 * y
        total = l1 * x + l2 * y
        state, u1 = _next_u01(state)
        t_next = t - math.log(1.0 - u1) / total
        while gi < p and grid[gi] < t_next:
            out_x[gi] = x
            out_y[gi] = y
            gi += 1
        if gi >= p:
            break
        t = t_next
        state, u2 = _next_u01(state)
        if u2 * total < rate_x:
            x += 1
        else:
            y += 1
    return out_x, out_y


@njit(cache=True, nogil=True)
def rk4_path(theta, mu0, s20, n0, grid, max_step):
    """Classical RK4 on (mu, sigma2, N) with internal step <= max_step."""
    al, be, l1, l2 = theta[0], theta[1], theta[2], theta[3]
    p = grid.size
    mu_out = np.empty(p)
    s2_out = np.empty(p)
    nt_out = np.empty(p)
    mu = mu0
    s2 = s20
    nt = n0
    mu_out[0] = mu
    s2_out[0] = s2
    nt_out[0] = nt
    for k in range(p - 1):
        span = grid[k + 1] - grid[k]
        nsub = int(math.ceil(span / max_step))
        if nsub < 1:
            nsub = 1
        h = span / nsub
        for _ in range(nsub):
            k1m, k1s, k1n = _rhs3(mu, s2, nt, al, be, l1, l2)
            k2m, k2s, k2n = _rhs3(mu + 0.5 * h * k1m, s2 + 0.5 * h * k1s,
                                  nt + 0.5 * h * k1n, al, be, l1, l2)
            k3m, k3s, k3n = _rhs3(mu + 0.5 * h * k2m, s2 + 0.5 * h * k2s,
                                  nt + 0.5 * h * k2n, al, be, l1, l2)
            k4m, k4s, k4n = _rhs3(mu + h * k3m, s2 + h * k3s,
                                  nt + h * k3n, al, be, l1, l2)
            mu += h * (k1m + 2.0 * k2m + 2.0 * k3m + k4m) / 6.0
            s2 += h * (k1s + 2.0 * k2s + 2.0 * k3s + k4s) / 6.0
            nt += h * (k1n + 2.0 * k2n + 2.0 * k3n + k4n) / 6.0
        mu_out[k + 1] = mu
        s2_out[k + 1] = s2
        nt_out[k + 1] = nt
    return mu_out, s2_out, nt_out


@njit(cache=True, nogil=True, inline="always")
def _rhs3(mu, s2, nt, al, be, l1, l2):
    dmu = ((l2 - l1) * mu + (l1 * al - l2 * (1.0 + be))) * mu + l2 * be
    ds2 = ((2.0 * (l1 * al - l2 * be) - (l1 + l2)) * s2
           + 2.0 * (l2 - l1) * mu * s2
           + ((l1 - l2) * mu + l2) / (2.0 * nt))
    dnt = ((l1 - l2) * mu + l2) * nt
    return dmu, ds2, dnt
