"""Compiled right-hand sides and the Dormand-Prince 5(4) integrator.

Parameter layout (see ModelSpec.params):
    [S, T, fbar, n_g, n_f, (k, c, d) * n_g, (k, a, b) * n_f]

State layout: [z0, z1, J11, J12, J21, J22, action]; the Jacobian block and the
action slot are present only when requested.
"""

import math

import numpy as np
from numba import config, njit, prange

# the kernels never nest parallel regions, so omp/workqueue suffice; trying tbb
# first only produces version warnings on hosts with an old TBB
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

CANONICAL = 0
SCALED = 1
SHIFTED = 2

OK = 0
UNDERFLOW = 1
TOO_MANY_STEPS = 2
NONFINITE = 3

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def potential(x, par):
    """Return (G, g, g') at x."""
    S = par[0]
    ng = int(par[3])
    G = 0.0
    g = 0.0
    dg = 0.0
    for j in range(ng):
        k = par[5 + 3 * j]
        c = par[6 + 3 * j]
        d = par[7 + 3 * j]
        w = TWO_PI * k / S
        cs = math.cos(w * x)
        sn = math.sin(w * x)
        g += c * cs + d * sn
        G += (c * sn - d * cs) / w
        dg += w * (d * cs - c * sn)
    return G, g, dg


@njit(cache=True)
def forcing(t, par):
    """Return (F, f) at t."""
    T = par[1]
    fbar = par[2]
    ng = int(par[3])
    nf = int(par[4])
    off = 5 + 3 * ng
    F = fbar * t
    f = fbar
    for j in range(nf):
        k = par[off + 3 * j]
        a = par[off + 1 + 3 * j]
        b = par[off + 2 + 3 * j]
        w = TWO_PI * k / T
        cs = math.cos(w * t)
        sn = math.sin(w * t)
        f += a * cs + b * sn
        F += (a * sn - b * cs) / w
    return F, f


@njit(cache=True)
def rhs(system, t, y, par, delta, jac, act, dy):
    a11 = 0.0
    a12 = 0.0
    a21 = 0.0
    a22 = 0.0
    if system == CANONICAL:
        q = y[0]
        p = y[1]
        G, g, dg = potential(q, par)
        F, f = forcing(t, par)
        s = math.sqrt(1.0 + p * p)
        dy[0] = p / s
        dy[1] = g + f
        a12 = 1.0 / (s * s * s)
        a21 = dg
        if act:
            dy[-1] = -1.0 / s + G + f * q
    elif system == SHIFTED:
        Q = y[0]
        P = y[1]
        G, g, dg = potential(Q, par)
        F, f = forcing(t, par)
        m = P + F
        s = math.sqrt(1.0 + m * m)
        dy[0] = m / s
        dy[1] = g
        a12 = 1.0 / (s * s * s)
        a21 = dg
        if act:
            dy[-1] = -(F * F + P * F + 1.0) / s + G
    else:
        u = y[0]
        v = y[1]
        G, g, dg = potential(u, par)
        F, f = forcing(t, par)
        phi = G + F
        w = 1.0 + delta * v * phi
        D = math.sqrt(delta * delta * v * v + w * w)
        ratio = w / D
        # 1 - w/D written without cancellation
        one_minus = delta * delta * v * v / (D * (D + w))
        dy[0] = ratio
        dy[1] = -delta * v * v * g * one_minus
        if jac:
            wu = delta * v * g
            wv = delta * phi
            Du = w * wu / D
            Dv = (delta * delta * v + w * wv) / D
            su = (wu * D - w * Du) / (D * D)
            sv = (wv * D - w * Dv) / (D * D)
            a11 = su
            a12 = sv
            a21 = -delta * v * v * (dg * one_minus - g * su)
            a22 = -delta * (2.0 * v * g * one_minus - v * v * g * sv)
        if act:
            dy[-1] = 0.0
    if jac:
        j11 = y[2]
        j12 = y[3]
        j21 = y[4]
        j22 = y[5]
        dy[2] = a11 * j11 + a12 * j21
        dy[3] = a11 * j12 + a12 * j22
        dy[4] = a21 * j11 + a22 * j21
        dy[5] = a21 * j12 + a22 * j22


# Dormand-Prince coefficients
C2 = 1.0 / 5.0
C3 = 3.0 / 10.0
C4 = 4.0 / 5.0
C5 = 8.0 / 9.0
A21 = 1.0 / 5.0
A31 = 3.0 / 40.0
A32 = 9.0 / 40.0
A41 = 44.0 / 45.0
A42 = -56.0 / 15.0
A43 = 32.0 / 9.0
A51 = 19372.0 / 6561.0
A52 = -25360.0 / 2187.0
A53 = 64448.0 / 6561.0
A54 = -212.0 / 729.0
A61 = 9017.0 / 3168.0
A62 = -355.0 / 33.0
A63 = 46732.0 / 5247.0
A64 = 49.0 / 176.0
A65 = -5103.0 / 18656.0
A71 = 35.0 / 384.0
A73 = 500.0 / 1113.0
A74 = 125.0 / 192.0
A75 = -2187.0 / 6784.0
A76 = 11.0 / 84.0
E1 = 71.0 / 57600.0
E3 = -71.0 / 16695.0
E4 = 71.0 / 1920.0
E5 = -17253.0 / 339200.0
E6 = 22.0 / 525.0
E7 = -1.0 / 40.0
D1 = -12715105075.0 / 11282082432.0
D3 = 87487479700.0 / 32700410799.0
D4 = -10690763975.0 / 1880347072.0
D5 = 701980252875.0 / 199316789632.0
D6 = -1453857185.0 / 822651844.0
D7 = 69997945.0 / 29380423.0

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0
BETA = 0.04
MAX_STEPS = 10_000_000


@njit(cache=True)
def _initial_step(system, t0, y0, f0, par, delta, jac, act, tol, hmax, dirn, work):
    n = y0.shape[0]
    dnf = 0.0
    dny = 0.0
    for i in range(n):
        sk = tol + tol * abs(y0[i])
        dnf += (f0[i] / sk) ** 2
        dny += (y0[i] / sk) ** 2
    dnf /= n
    dny /= n
    if dnf <= 1e-10 or dny <= 1e-10:
        h = 1.0e-6
    else:
        h = 0.01 * math.sqrt(dny / dnf)
    h = min(h, hmax)
    y1 = np.empty(n)
    for i in range(n):
        y1[i] = y0[i] + dirn * h * f0[i]
    rhs(system, t0 + dirn * h, y1, par, delta, jac, act, work)
    der2 = 0.0
    for i in range(n):
        sk = tol + tol * abs(y0[i])
        der2 += ((work[i] - f0[i]) / sk) ** 2
    der2 = math.sqrt(der2 / n) / h
    der12 = max(abs(der2), math.sqrt(dnf))
    if der12 <= 1e-15:
        h1 = max(1.0e-6, h * 1.0e-3)
    else:
        h1 = (0.01 / der12) ** 0.2
    return min(100.0 * h, h1, hmax)


@njit(cache=True)
def dopri5(system, par, delta, t0, t1, y0, tol, jac, act, t_eval, record, h_start):
    """Integrate from t0 to t1 (either direction).

    Returns (status, t_last, y_last, n_accepted, n_rejected, eval_y, rec_t, rec_y, h_last).
    eval_y holds dense-output states at t_eval (which must be monotone in the
    direction of integration and lie within [t0, t1]).
    """
    n = y0.shape[0]
    y = y0.copy()
    ynew = np.empty(n)
    ytmp = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    ne = t_eval.shape[0]
    eval_y = np.full((ne, n), np.nan)
    cap = 256 if record else 1
    rec_t = np.empty(cap)
    rec_y = np.empty((cap, n))
    nrec = 0

    t = t0
    span = t1 - t0
    dirn = 1.0 if span >= 0 else -1.0
    hmax = abs(span)
    ie = 0
    while ie < ne and t_eval[ie] == t0:
        eval_y[ie, :] = y
        ie += 1
    if record:
        rec_t[0] = t
        rec_y[0, :] = y
        nrec = 1
    if span == 0.0:
        return OK, t, y, 0, 0, eval_y, rec_t[:nrec], rec_y[:nrec], 0.0

    rhs(system, t, y, par, delta, jac, act, k1)
    if h_start > 0.0:
        h = min(h_start, hmax)
    else:
        h = _initial_step(system, t, y, k1, par, delta, jac, act, tol, hmax, dirn, k2)
    facold = 1.0e-4
    naccept = 0
    nreject = 0
    reject = False
    last = False
    status = OK
    eps = 2.220446049250313e-16
    h_next = h

    while True:
        if naccept + nreject >= MAX_STEPS:
            status = TOO_MANY_STEPS
            break
        if h < 1e-300 or 0.1 * h <= eps * abs(t):
            status = UNDERFLOW
            break
        if (t + dirn * 1.01 * h - t1) * dirn >= 0.0:
            h = abs(t1 - t)
            last = True
        hs = dirn * h
        for i in range(n):
            ytmp[i] = y[i] + hs * A21 * k1[i]
        rhs(system, t + C2 * hs, ytmp, par, delta, jac, act, k2)
        for i in range(n):
            ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i])
        rhs(system, t + C3 * hs, ytmp, par, delta, jac, act, k3)
        for i in range(n):
            ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        rhs(system, t + C4 * hs, ytmp, par, delta, jac, act, k4)
        for i in range(n):
            ytmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        rhs(system, t + C5 * hs, ytmp, par, delta, jac, act, k5)
        for i in range(n):
            ytmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
        tph = t + hs
        rhs(system, tph, ytmp, par, delta, jac, act, k6)
        for i in range(n):
            ynew[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
        rhs(system, tph, ynew, par, delta, jac, act, k7)
        err = 0.0
        finite = True
        for i in range(n):
            e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            sk = tol + tol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sk) ** 2
            if not math.isfinite(ynew[i]):
                finite = False
        err = math.sqrt(err / n)
        if not finite or not math.isfinite(err):
            # treat as a failed step and shrink hard
            h *= 0.1
            nreject += 1
            last = False
            reject = True
            continue
        fac11 = err ** (0.2 - BETA * 0.75)
        fac = fac11 / facold**BETA
        fac = max(1.0 / FAC_MAX, min(1.0 / FAC_MIN, fac / SAFETY))
        hnew = h / fac
        if err <= 1.0:
            facold = max(err, 1.0e-4)
            naccept += 1
            # dense output for requested times inside (t, t + hs]
            if ie < ne:
                while ie < ne and (t_eval[ie] - tph) * dirn <= 0.0:
                    theta = (t_eval[ie] - t) / hs
                    theta1 = 1.0 - theta
                    for i in range(n):
                        ydiff = ynew[i] - y[i]
                        bspl = hs * k1[i] - ydiff
                        r4 = ydiff - hs * k7[i] - bspl
                        r5 = hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                        eval_y[ie, i] = y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)))
                    ie += 1
            for i in range(n):
                k1[i] = k7[i]
                y[i] = ynew[i]
            t = t1 if last else tph
            h_next = hnew
            if record:
                if nrec == cap:
                    cap *= 2
                    nt = np.empty(cap)
                    ny = np.empty((cap, n))
                    nt[:nrec] = rec_t[:nrec]
                    ny[:nrec, :] = rec_y[:nrec, :]
                    rec_t = nt
                    rec_y = ny
                rec_t[nrec] = t
                rec_y[nrec, :] = y
                nrec += 1
            if last:
                break
            if reject:
                hnew = min(hnew, h)
            reject = False
            h = min(hnew, hmax)
        else:
            hnew = h / min(1.0 / FAC_MIN, fac11 / SAFETY)
            reject = True
            last = False
            if naccept >= 1:
                nreject += 1
            h = hnew
    return status, t, y, naccept, nreject, eval_y, rec_t[:nrec], rec_y[:nrec], h_next


@njit(cache=True)
def iterate_period(par, q0, p0, n_iter, tol):
    """Iterate the time-T map of the canonical system n_iter times.

    Returns (status, n_done, q, p) with q, p of length n_iter + 1.
    """
    T = par[1]
    qs = np.full(n_iter + 1, np.nan)
    ps = np.full(n_iter + 1, np.nan)
    qs[0] = q0
    ps[0] = p0
    y = np.array([q0, p0])
    empty = np.empty(0)
    h = 0.0
    for i in range(n_iter):
        status, t, y, na, nr, ev, rt, ry, h = dopri5(CANONICAL, par, 0.0, 0.0, T, y, tol, False, False, empty, False, h)
        if status != OK:
            return status, i, qs, ps
        qs[i + 1] = y[0]
        ps[i + 1] = y[1]
    return OK, n_iter, qs, ps


@njit(cache=True, parallel=True)
def iterate_many(par, q0, p0, n_iter, tol):
    m = q0.shape[0]
    qs = np.empty((m, n_iter + 1))
    ps = np.empty((m, n_iter + 1))
    status = np.empty(m, dtype=np.int64)
    done = np.empty(m, dtype=np.int64)
    for j in prange(m):
        st, nd, q, p = iterate_period(par, q0[j], p0[j], n_iter, tol)
        qs[j, :] = q
        ps[j, :] = p
        status[j] = st
        done[j] = nd
    return status, done, qs, ps
