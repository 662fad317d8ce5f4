# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: diffused Gaussian-mixture score and Heun integrator.

Same contract as the numpy twin (`_gmm_np`); rows of a batch are processed
independently in C, so batch evaluation is bitwise identical to row-at-a-time
evaluation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

cdef double _LOG_2PI = 1.8378770664093453


cdef inline double _alpha_bar(double t, double beta_min, double beta_max) noexcept nogil:
    return exp(-(beta_min * t + 0.5 * (beta_max - beta_min) * t * t))


cdef inline double _beta(double t, double beta_min, double beta_max) noexcept nogil:
    return beta_min + t * (beta_max - beta_min)


cdef int _factor_components(double t, const double[::1] weights, const double[:, ::1] means,
                            const double[:, :, ::1] covs, double beta_min, double beta_max,
                            double[:, ::1] mus, double[:, :, ::1] chol,
                            double[::1] logdet) noexcept nogil:
    """Diffused means and Cholesky factors of ab*cov + (1-ab)*I at time t."""
    cdef int k_count = means.shape[0]
    cdef int m = means.shape[1]
    cdef double ab = _alpha_bar(t, beta_min, beta_max)
    cdef double sqrt_ab = sqrt(ab)
    cdef int k, i, j, p
    cdef double s
    for k in range(k_count):
        for i in range(m):
            mus[k, i] = sqrt_ab * means[k, i]
            for j in range(m):
                chol[k, i, j] = ab * covs[k, i, j]
            chol[k, i, i] += 1.0 - ab
        for i in range(m):
            for j in range(i + 1):
                s = chol[k, i, j]
                for p in range(j):
                    s -= chol[k, i, p] * chol[k, j, p]
                if i == j:
                    if s <= 0.0:
                        return -1
                    chol[k, i, i] = sqrt(s)
                else:
                    chol[k, i, j] = s / chol[k, j, j]
        s = 0.0
        for i in range(m):
            s += log(chol[k, i, i])
        logdet[k] = 2.0 * s
    return 0


cdef void _score_point(const double* x, const double[::1] logw, const double[:, ::1] mus,
                       const double[:, :, ::1] chol, const double[::1] logdet,
                       double* diff, double* y, double* z,
                       double* loglik, double* pulls, double* out) noexcept nogil:
    cdef int k_count = mus.shape[0]
    cdef int m = mus.shape[1]
    cdef int k, i, j
    cdef double s, amax, rsum, r
    for k in range(k_count):
        for i in range(m):
            diff[i] = mus[k, i] - x[i]
        # forward solve L y = diff, then maha = |y|^2
        for i in range(m):
            s = diff[i]
            for j in range(i):
                s -= chol[k, i, j] * y[j]
            y[i] = s / chol[k, i, i]
        s = 0.0
        for i in range(m):
            s += y[i] * y[i]
        loglik[k] = logw[k] - 0.5 * (s + logdet[k] + m * _LOG_2PI)
        # back solve L^T z = y gives the precision-weighted pull Sigma^-1 diff
        for i in range(m - 1, -1, -1):
            s = y[i]
            for j in range(i + 1, m):
                s -= chol[k, j, i] * z[j]
            z[i] = s / chol[k, i, i]
        for i in range(m):
            pulls[k * m + i] = z[i]
    amax = loglik[0]
    for k in range(1, k_count):
        if loglik[k] > amax:
            amax = loglik[k]
    rsum = 0.0
    for k in range(k_count):
        loglik[k] = exp(loglik[k] - amax)
        rsum += loglik[k]
    for i in range(m):
        out[i] = 0.0
    for k in range(k_count):
        r = loglik[k] / rsum
        for i in range(m):
            out[i] += r * pulls[k * m + i]


def gmm_score_batch(x, double t, weights, means, covs, double beta_min, double beta_max):
    """∇_x log p_t(x) for the VP-diffused mixture; x is (B, m), returns (B, m)."""
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[:, ::1] mv = np.ascontiguousarray(means, dtype=np.float64)
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(covs, dtype=np.float64)
    cdef int b = xv.shape[0]
    cdef int k_count = mv.shape[0]
    cdef int m = mv.shape[1]
    logw_arr = np.log(np.asarray(weights, dtype=np.float64))
    cdef const double[::1] logw = logw_arr
    out_arr = np.empty((b, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] mus = np.empty((k_count, m), dtype=np.float64)
    cdef double[:, :, ::1] chol = np.empty((k_count, m, m), dtype=np.float64)
    cdef double[::1] logdet = np.empty(k_count, dtype=np.float64)
    cdef double[::1] scratch = np.empty(3 * m + k_count + k_count * m, dtype=np.float64)
    cdef double* diff = &scratch[0]
    cdef double* y = &scratch[m]
    cdef double* z = &scratch[2 * m]
    cdef double* loglik = &scratch[3 * m]
    cdef double* pulls = &scratch[3 * m + k_count]
    cdef int i, ok
    with nogil:
        ok = _factor_components(t, wv, mv, cv, beta_min, beta_max, mus, chol, logdet)
    if ok != 0:
        raise np.linalg.LinAlgError("diffused covariance is not positive-definite")
    with nogil:
        for i in range(b):
            _score_point(&xv[i, 0], logw, mus, chol, logdet, diff, y, z, loglik, pulls, &out[i, 0])
    return out_arr


def heun_denoise_batch(x1, int steps, weights, means, covs,
                       double beta_min, double beta_max, double t_min):
    """Integrate the probability-flow ODE from t=1 down to t_min with Heun.

    dx/dt = -0.5*β(t)*(x + score(x, t)), uniform grid with `steps` steps.
    x1 is (B, m); returns the (B, m) samples at t=t_min.
    """
    x_arr = np.array(x1, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] xv = x_arr
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[:, ::1] mv = np.ascontiguousarray(means, dtype=np.float64)
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(covs, dtype=np.float64)
    cdef int b = xv.shape[0]
    cdef int k_count = mv.shape[0]
    cdef int m = mv.shape[1]
    logw_arr = np.log(np.asarray(weights, dtype=np.float64))
    cdef const double[::1] logw = logw_arr
    cdef const double[::1] ts = np.linspace(1.0, t_min, steps + 1)
    cdef double[:, ::1] mus0 = np.empty((k_count, m), dtype=np.float64)
    cdef double[:, :, ::1] chol0 = np.empty((k_count, m, m), dtype=np.float64)
    cdef double[::1] logdet0 = np.empty(k_count, dtype=np.float64)
    cdef double[:, ::1] mus1 = np.empty((k_count, m), dtype=np.float64)
    cdef double[:, :, ::1] chol1 = np.empty((k_count, m, m), dtype=np.float64)
    cdef double[::1] logdet1 = np.empty(k_count, dtype=np.float64)
    cdef double[::1] scratch = np.empty(6 * m + k_count + k_count * m, dtype=np.float64)
    cdef double* diff = &scratch[0]
    cdef double* y = &scratch[m]
    cdef double* z = &scratch[2 * m]
    cdef double* sc = &scratch[3 * m]
    cdef double* f0 = &scratch[4 * m]
    cdef double* xe = &scratch[5 * m]
    cdef double* loglik = &scratch[6 * m]
    cdef double* pulls = &scratch[6 * m + k_count]
    cdef double t0, t1, h, b0, b1
    cdef int j, i, p, ok0, ok1
    for j in range(steps):
        t0 = ts[j]
        t1 = ts[j + 1]
        h = t1 - t0
        with nogil:
            ok0 = _factor_components(t0, wv, mv, cv, beta_min, beta_max, mus0, chol0, logdet0)
            ok1 = _factor_components(t1, wv, mv, cv, beta_min, beta_max, mus1, chol1, logdet1)
        if ok0 != 0 or ok1 != 0:
            raise np.linalg.LinAlgError("diffused covariance is not positive-definite")
        b0 = _beta(t0, beta_min, beta_max)
        b1 = _beta(t1, beta_min, beta_max)
        with nogil:
            for i in range(b):
                _score_point(&xv[i, 0], logw, mus0, chol0, logdet0, diff, y, z, loglik, pulls, sc)
                for p in range(m):
                    f0[p] = -0.5 * b0 * (xv[i, p] + sc[p])
                    xe[p] = xv[i, p] + h * f0[p]
                _score_point(xe, logw, mus1, chol1, logdet1, diff, y, z, loglik, pulls, sc)
                for p in range(m):
                    xv[i, p] = xv[i, p] + (0.5 * h) * (f0[p] + (-0.5 * b1 * (xe[p] + sc[p])))
    return x_arr
