"""Hot kernels of the time-domain integrator.

Everything here is plain-numpy code that numba can compile; with
``RESPA_NO_NUMBA=1`` the same functions run uncompiled.  The integrator is an
adaptive embedded Dormand-Prince 5(4) pair on the complex mode envelopes in
the co-rotating frame, recording the state at exact uniform sample times.
"""

import numpy as np

from respa._accel import njit

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5, _C6 = 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0
_A21 = 0.2
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# error = 5th-order minus embedded 4th-order weights
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


@njit(cache=True)
def rhs(t, y, lin, w4, s_coupl, drv_omega, drv_amp):
    """Co-rotating-frame envelope derivative.

    lin[m] = i*(omega_m - w_ref) - kappa_m/2; drv_omega are drive offsets
    from the frame; the cubic force keeps the (2,1) rotating-wave products,
    identical in convention to the harmonic-balance residual.
    """
    m_count = y.shape[0]
    out = np.empty(m_count, dtype=np.complex128)
    b_in = 0.0 + 0.0j
    for d in range(drv_omega.shape[0]):
        b_in += drv_amp[d] * np.exp(1j * drv_omega[d] * t)
    for m in range(m_count):
        acc = 0.0 + 0.0j
        for p in range(m_count):
            yp = y[p]
            for q in range(m_count):
                ypq = yp * y[q]
                for r in range(m_count):
                    w = w4[m, p, q, r]
                    if w != 0.0:
                        acc += w * ypq * np.conj(y[r])
        out[m] = lin[m] * y[m] + 1j * acc + s_coupl[m] * b_in
    return out


@njit(cache=True)
def integrate_adaptive(
    y0,
    t_start,
    rec_times,
    lin,
    w4,
    s_coupl,
    drv_omega,
    drv_amp,
    rtol,
    atol,
    max_steps,
):
    """Integrate from t_start, recording the state at each rec_times entry.

    Returns (y_rec, n_steps, n_rejected, max_error_estimate, status) with
    status 0 = ok, 1 = step-size collapse, 2 = step budget exhausted.
    """
    n_rec = rec_times.shape[0]
    m_count = y0.shape[0]
    y_rec = np.zeros((n_rec, m_count), dtype=np.complex128)

    t = t_start
    y = y0.copy()
    t_final = rec_times[n_rec - 1]
    h = (t_final - t_start) * 1e-6 + 1e-18
    h_min = max((t_final - t_start) * 1e-14, 1e-18)

    n_steps = 0
    n_rejected = 0
    max_err = 0.0
    i_rec = 0
    status = 0

    while i_rec < n_rec:
        if n_steps >= max_steps:
            status = 2
            break
        target = rec_times[i_rec]
        if target - t < h_min:
            y_rec[i_rec] = y
            i_rec += 1
            continue
        h_step = h if t + h <= target else target - t

        k1 = rhs(t, y, lin, w4, s_coupl, drv_omega, drv_amp)
        k2 = rhs(t + _C2 * h_step, y + h_step * (_A21 * k1), lin, w4, s_coupl, drv_omega, drv_amp)
        k3 = rhs(
            t + _C3 * h_step,
            y + h_step * (_A31 * k1 + _A32 * k2),
            lin, w4, s_coupl, drv_omega, drv_amp,
        )
        k4 = rhs(
            t + _C4 * h_step,
            y + h_step * (_A41 * k1 + _A42 * k2 + _A43 * k3),
            lin, w4, s_coupl, drv_omega, drv_amp,
        )
        k5 = rhs(
            t + _C5 * h_step,
            y + h_step * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4),
            lin, w4, s_coupl, drv_omega, drv_amp,
        )
        k6 = rhs(
            t + _C6 * h_step,
            y + h_step * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5),
            lin, w4, s_coupl, drv_omega, drv_amp,
        )
        y_new = y + h_step * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7 = rhs(t + h_step, y_new, lin, w4, s_coupl, drv_omega, drv_amp)

        err_vec = h_step * (
            _E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7
        )
        err = 0.0
        for m in range(m_count):
            scale = atol + rtol * max(abs(y[m]), abs(y_new[m]))
            e = abs(err_vec[m]) / scale
            err += e * e
        err = np.sqrt(err / m_count)

        n_steps += 1
        if err <= 1.0:
            t = t + h_step
            y = y_new
            if err > max_err:
                max_err = err
            if target - t < h_min:
                y_rec[i_rec] = y
                i_rec += 1
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** (-0.2)))
            h = max(h_step * factor, h_min)
        else:
            n_rejected += 1
            h = max(h_step * max(0.1, 0.9 * err ** (-0.2)), h_min)
            if h <= h_min * 2.0 and err > 100.0:
                status = 1
                break

    return y_rec, n_steps, n_rejected, max_err, status
