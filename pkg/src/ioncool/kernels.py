"""Numerical kernels shared by the trajectory, dynamics and optimisation layers.

Everything in here is written in a scalar, allocation-light style so that
it compiles under ``numba.njit``; with ``IONCOOL_DISABLE_NUMBA=1`` the same
functions run as ordinary Python.

A protocol is passed to the kernels as a flat float64 parameter vector
(see ``PP_*`` indices) holding the run-time, the normal-mode boundary data,
the constants, the masses, an optional constant stray field and the eight
even-power coefficients of the stretch-mode auxiliary polynomial in
``u = t/t_f - 1/2``.
"""
import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from ._jit import njit

PP_TF = 0
PP_OM0P2 = 1
PP_OMM2 = 2
PP_CC = 3
PP_M1 = 4
PP_M2 = 5
PP_GAMMA = 6
PP_STILDE = 7
PP_COEF = 8
PP_SIZE = 16

STATUS_OK = 0
STATUS_STEP_TOO_SMALL = 1
STATUS_ORDER_VIOLATION = 2
STATUS_BAD_PROTOCOL = 3
STATUS_MAX_STEPS = 4
STATUS_WELL_ESCAPE = 5  # set on the Python side after integration

MODE_IONS = 0
MODE_AUX = 1

_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:_NS])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)


def rho_coefficients(A: float, B: float, rho_in: float) -> np.ndarray:
    """Coefficients of ``u^0, u^2, ..., u^14`` for the stretch-mode auxiliary.

    The polynomial equals ``rho_in`` at ``u = 0`` with second derivative
    ``A``, equals 1 at ``u = +-1/2`` with derivatives one to four vanishing
    there, and has ``B`` as its 14th-order coefficient.
    """
    r = rho_in
    return np.array(
        [
            r,
            A / 2.0,
            240.0 - 240.0 * r - 10.0 * A - B / 1024.0,
            -2560.0 + 2560.0 * r + 80.0 * A + 5.0 * B / 256.0,
            11520.0 - 11520.0 * r - 320.0 * A - 5.0 * B / 32.0,
            -24576.0 + 24576.0 * r + 640.0 * A + 5.0 * B / 8.0,
            20480.0 - 20480.0 * r - 512.0 * A - 5.0 * B / 4.0,
            B,
        ]
    )


@njit
def rho_derivatives(s, coef):
    """Value and first four s-derivatives of the auxiliary polynomial."""
    u = s - 0.5
    u2 = u * u
    r0 = 0.0
    r1 = 0.0
    r2 = 0.0
    r3 = 0.0
    r4 = 0.0
    # Horner in u^2 for each derivative order.
    for k in range(7, -1, -1):
        n = 2 * k
        c = coef[k]
        r0 = r0 * u2 + c
        if k >= 1:
            r1 = r1 * u2 + c * n
            r2 = r2 * u2 + c * n * (n - 1)
        if k >= 2:
            r3 = r3 * u2 + c * n * (n - 1) * (n - 2)
            r4 = r4 * u2 + c * n * (n - 1) * (n - 2) * (n - 3)
    # r1 and r3 are odd: their Horner sums carry one power of u less.
    return r0, r1 * u, r2, r3 * u, r4


@njit
def protocol_point(t, pp):
    """Full protocol state at time ``t``.

    Returns ``(rho, W, d, d_dot, d_ddot, alpha, beta, gamma, s, s_dot,
    s_ddot, om_plus2)`` where ``W = Omega_+^2 - Omega_-^2`` and ``gamma``
    excludes any stray field. For equal masses ``s`` and ``gamma`` vanish
    identically.
    """
    tf = pp[PP_TF]
    om0p2 = pp[PP_OM0P2]
    omm2 = pp[PP_OMM2]
    cc = pp[PP_CC]
    m1 = pp[PP_M1]
    m2 = pp[PP_M2]
    r0, r1, r2, r3, r4 = rho_derivatives(t / tf, pp[PP_COEF:PP_COEF + 8])
    it = 1.0 / tf
    r1 *= it
    r2 *= it * it
    r3 *= it * it * it
    r4 *= it * it * it * it

    ir = 1.0 / r0
    ir2 = ir * ir
    ir4 = ir2 * ir2
    # Omega_+^2 = Omega_0+^2 / rho^4 - rho'' / rho and its time derivatives
    omp2 = om0p2 * ir4 - r2 * ir
    omp2_d = -4.0 * om0p2 * ir4 * ir * r1 - (r3 * r0 - r2 * r1) * ir2
    omp2_dd = (
        20.0 * om0p2 * ir4 * ir2 * r1 * r1
        - 4.0 * om0p2 * ir4 * ir * r2
        - r4 * ir
        + 2.0 * r3 * r1 * ir2
        + r2 * r2 * ir2
        - 2.0 * r2 * r1 * r1 * ir2 * ir
    )
    w = omp2 - omm2
    w_d = omp2_d
    w_dd = omp2_dd
    mu = np.sqrt(m1 * m2)
    if w <= 0.0:
        nan = np.nan
        return r0, w, nan, nan, nan, nan, nan, nan, nan, nan, nan, omp2

    d = (4.0 * cc / (mu * w)) ** (1.0 / 3.0)
    g = w_d / w
    d_d = -d * g / 3.0
    d_dd = d * (4.0 / 9.0 * g * g - w_dd / (3.0 * w))

    ssum = omp2 + omm2
    ssum_d = w_d
    ssum_dd = w_dd
    cm = (m1 + m2) / 8.0
    id1 = 1.0 / d
    id2 = id1 * id1
    id3 = id2 * id1
    id5 = id3 * id2
    beta = cm * ssum * id2 - 2.0 * cc * id5
    if m1 == m2:
        alpha = cc * id3 - 0.5 * beta * d * d
        return r0, w, d, d_d, d_dd, alpha, beta, 0.0, 0.0, 0.0, 0.0, omp2

    id4 = id2 * id2
    id6 = id3 * id3
    id7 = id6 * id1
    beta_d = cm * (ssum_d * id2 - 2.0 * ssum * d_d * id3) + 10.0 * cc * d_d * id6
    beta_dd = cm * (
        ssum_dd * id2 - 4.0 * ssum_d * d_d * id3 - 2.0 * ssum * d_dd * id3 + 6.0 * ssum * d_d * d_d * id4
    ) + 10.0 * cc * (d_dd * id6 - 6.0 * d_d * d_d * id7)
    den = beta * d
    den_d = beta_d * d + beta * d_d
    den_dd = beta_dd * d + 2.0 * beta_d * d_d + beta * d_dd
    k = (m2 - m1) / 48.0
    iden = 1.0 / den
    s = k * ssum * iden
    s_d = k * (ssum_d * iden - ssum * den_d * iden * iden)
    s_dd = k * (
        ssum_dd * iden
        - 2.0 * ssum_d * den_d * iden * iden
        - ssum * den_dd * iden * iden
        + 2.0 * ssum * den_d * den_d * iden * iden * iden
    )
    alpha = cc * id3 - 0.5 * beta * d * d - 6.0 * beta * s * s
    gamma = -2.0 * alpha * s - 2.0 * beta * (1.5 * d * d * s + 2.0 * s * s * s)
    return r0, w, d, d_d, d_dd, alpha, beta, gamma, s, s_d, s_dd, omp2


@njit
def protocol_table(pp, times):
    """Evaluate ``protocol_point`` on an array of times, one row per time."""
    n = times.shape[0]
    out = np.empty((n, 12))
    for i in range(n):
        res = protocol_point(times[i], pp)
        for j in range(12):
            out[i, j] = res[j]
    return out


@njit
def protocol_extrema(pp, n):
    """Scan ``n`` uniformly spaced times: min W, min beta, max beta, min rho."""
    tf = pp[PP_TF]
    w_min = np.inf
    b_min = np.inf
    b_max = -np.inf
    rho_min = np.inf
    for i in range(n):
        t = tf * i / (n - 1)
        res = protocol_point(t, pp)
        rho = res[0]
        w = res[1]
        if rho < rho_min:
            rho_min = rho
        if w < w_min:
            w_min = w
        if w > 0.0:
            b = res[6]
            if b < b_min:
                b_min = b
            if b > b_max:
                b_max = b
    return w_min, b_min, b_max, rho_min


@njit
def _rhs(mode, t, y, pp, out):
    res = protocol_point(t, pp)
    if mode == MODE_IONS:
        alpha = res[5]
        beta = res[6]
        gamma = res[7] + pp[PP_GAMMA]
        cc = pp[PP_CC]
        x1 = y[0]
        x2 = y[1]
        r = x2 - x1
        fc = cc / (r * r)
        out[0] = y[2] / pp[PP_M1]
        out[1] = y[3] / pp[PP_M2]
        out[2] = -(gamma + 2.0 * alpha * x1 + 4.0 * beta * x1 * x1 * x1) - fc
        out[3] = -(gamma + 2.0 * alpha * x2 + 4.0 * beta * x2 * x2 * x2) + fc
    else:
        # stretch-mode and perturbed centre-of-mass auxiliaries, equal masses
        d = res[2]
        d_dd = res[4]
        beta = res[6]
        omp2 = res[11]
        omm2 = pp[PP_OMM2]
        sq = np.sqrt(0.5 * pp[PP_M1])
        delta = 3.0 * beta * d ** 4 * pp[PP_STILDE] / pp[PP_CC]
        out[0] = y[1]
        out[1] = -omp2 * y[0] - sq * d_dd
        out[2] = y[3]
        out[3] = -omm2 * y[2] - sq * d_dd * delta


@njit
def _error_norm(K, h, scale, n):
    e5 = 0.0
    e3 = 0.0
    for j in range(n):
        a5 = 0.0
        a3 = 0.0
        for i in range(_NS + 1):
            a5 += K[i, j] * _E5[i]
            a3 += K[i, j] * _E3[i]
        a5 /= scale[j]
        a3 /= scale[j]
        e5 += a5 * a5
        e3 += a3 * a3
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / np.sqrt((e5 + 0.01 * e3) * n)


@njit
def integrate(mode, pp, y0, t0, t_out, rtol, atol, max_step, max_steps):
    """Adaptive 8th-order Dormand-Prince integration.

    Returns ``(ys, status, n_steps, n_rejected, n_fev)`` with ``ys[k]`` the
    state at ``t_out[k]``. Steps are truncated to land on every output
    time exactly; the protocol is evaluated analytically at each stage.
    """
    n = y0.shape[0]
    n_out = t_out.shape[0]
    ys = np.full((n_out, n), np.nan)
    K = np.zeros((_NS + 1, n))
    y = y0.copy()
    y_new = np.empty(n)
    ytmp = np.empty(n)
    f = np.empty(n)
    f_new = np.empty(n)
    scale = np.empty(n)
    stage = np.empty(n)

    t = t0
    _rhs(mode, t, y, pp, f)
    n_fev = 1
    n_steps = 0
    n_rej = 0
    status = STATUS_OK
    t_end = t_out[n_out - 1]
    # initial step: a small fraction of the shortest protocol time scale
    h_abs = min(max_step, 1e-3 * max(t_end - t0, 1e-300))
    k_out = 0
    while k_out < n_out and t_out[k_out] <= t0:
        ys[k_out, :] = y
        k_out += 1

    while k_out < n_out:
        t_target = t_out[k_out]
        min_step = 10.0 * abs(np.nextafter(t, np.inf) - t)
        if h_abs > max_step:
            h_abs = max_step
        accepted = False
        rejected = False
        while not accepted:
            if h_abs < min_step:
                status = STATUS_STEP_TOO_SMALL
                break
            h_prop = h_abs
            t_new = t + h_abs
            truncated = False
            if t_new >= t_target:
                t_new = t_target
                truncated = True
            h = t_new - t
            for i in range(n):
                K[0, i] = f[i]
            for s in range(1, _NS):
                for i in range(n):
                    acc = 0.0
                    for j in range(s):
                        acc += K[j, i] * _A[s, j]
                    stage[i] = y[i] + h * acc
                _rhs(mode, t + _C[s] * h, stage, pp, ytmp)
                for i in range(n):
                    K[s, i] = ytmp[i]
            for i in range(n):
                acc = 0.0
                for j in range(_NS):
                    acc += K[j, i] * _B[j]
                y_new[i] = y[i] + h * acc
            _rhs(mode, t + h, y_new, pp, f_new)
            n_fev += _NS
            for i in range(n):
                K[_NS, i] = f_new[i]
                scale[i] = atol + max(abs(y[i]), abs(y_new[i])) * rtol
            err = _error_norm(K, h, scale, n)
            if err < 1.0 and np.isfinite(err):
                if err == 0.0:
                    factor = 10.0
                else:
                    factor = min(10.0, 0.9 * err ** (-1.0 / 8.0))
                if rejected:
                    factor = min(1.0, factor)
                h_abs = h * factor
                if truncated and not rejected:
                    # a step shortened to hit an output time says nothing new
                    h_abs = max(h_abs, h_prop)
                accepted = True
            else:
                if np.isfinite(err):
                    h_abs = h * max(0.2, 0.9 * err ** (-1.0 / 8.0))
                else:
                    h_abs = h * 0.2
                rejected = True
                n_rej += 1
        if status != STATUS_OK:
            break
        n_steps += 1
        t = t_new
        for i in range(n):
            y[i] = y_new[i]
            f[i] = f_new[i]
        if mode == MODE_IONS and y[1] <= y[0]:
            status = STATUS_ORDER_VIOLATION
            break
        if not np.isfinite(f[0]):
            status = STATUS_BAD_PROTOCOL
            break
        if t >= t_target:
            ys[k_out, :] = y
            k_out += 1
        if n_steps >= max_steps:
            status = STATUS_MAX_STEPS
            break
    return ys, status, n_steps, n_rej, n_fev


@njit
def phase_scan_final(pp, y0s, t_f, rtol, atol, max_step, max_steps):
    """Integrate a batch of initial states to ``t_f``; one row per state."""
    nb = y0s.shape[0]
    out = np.empty((nb, 4))
    status = np.zeros(nb, dtype=np.int64)
    t_out = np.array([t_f])
    for b in range(nb):
        ys, st, _, _, _ = integrate(MODE_IONS, pp, y0s[b], 0.0, t_out, rtol, atol, max_step, max_steps)
        out[b, :] = ys[0]
        status[b] = st
    return out, status
