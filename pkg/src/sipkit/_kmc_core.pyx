# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loop; must stay operation-for-operation identical to ``_kmc_py.simulate_chain``."""
import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log
from numpy.random cimport bitgen_t

cnp.import_array()

cdef long long RESUM_EVERY = 1024
cdef long long MAX_OCCUPATION = 4611686018427387904  # 2**62


cdef inline void _set(double[::1] rates, Py_ssize_t k, double v, double* R) noexcept nogil:
    R[0] += v - rates[k]
    rates[k] = v


cdef inline void _refresh_site(long long[::1] eta, double[::1] rates, Py_ssize_t j, Py_ssize_t N,
                               double m, double b1, double d1, double bN, double dN,
                               double* R) noexcept nogil:
    cdef double a, c, x
    if j >= 1:
        a = <double>eta[j - 1]
        c = <double>eta[j]
        _set(rates, j - 1, a * (m + c), R)
        _set(rates, N - 1 + j - 1, c * (m + a), R)
    if j <= N - 2:
        a = <double>eta[j]
        c = <double>eta[j + 1]
        _set(rates, j, a * (m + c), R)
        _set(rates, N - 1 + j, c * (m + a), R)
    if j == 0:
        x = <double>eta[0]
        _set(rates, 2 * N - 2, b1 * (m + x), R)
        _set(rates, 2 * N - 1, d1 * x, R)
    if j == N - 1:
        x = <double>eta[N - 1]
        _set(rates, 2 * N, bN * (m + x), R)
        _set(rates, 2 * N + 1, dN * x, R)


cdef inline double _resum(double[::1] rates, Py_ssize_t K) noexcept nogil:
    cdef double total = 0.0
    cdef Py_ssize_t s
    for s in range(K):
        total += rates[s]
    return total


cdef inline Py_ssize_t _accumulate(double a, double c, double t_burn, double[::1] edges,
                                   Py_ssize_t cb, Py_ssize_t B, Py_ssize_t N, Py_ssize_t H,
                                   long long[::1] eta, double[:, ::1] dens,
                                   double[:, :, ::1] hist) noexcept nogil:
    cdef double stop, seg_end, seg
    cdef Py_ssize_t i
    cdef long long x
    if c <= t_burn:
        return cb
    if a < t_burn:
        a = t_burn
    while a < c:
        while cb < B - 1 and a >= edges[cb + 1]:
            cb += 1
        stop = edges[cb + 1]
        seg_end = c if c < stop else stop
        seg = seg_end - a
        for i in range(N):
            x = eta[i]
            dens[cb, i] += x * seg
            hist[cb, i, x if x <= H else H + 1] += seg
        a = seg_end
    return cb


def simulate_chain(eta0, double m, double b1, double d1, double bN, double dN,
                   double t_burn, double t_end, Py_ssize_t n_batches, Py_ssize_t hist_max,
                   bit_generator):
    """Run one trajectory; see ``_kmc_py.simulate_chain`` for the contract."""
    cdef long long[::1] eta = np.array(eta0, dtype=np.int64)
    cdef Py_ssize_t N = eta.shape[0]
    cdef Py_ssize_t K = 2 * N + 2
    cdef Py_ssize_t B = n_batches
    cdef Py_ssize_t H = hist_max
    dens_arr = np.zeros((B, N))
    cross_arr = np.zeros((B, N - 1), dtype=np.int64)
    hist_arr = np.zeros((B, N, H + 2))
    rates_arr = np.zeros(K)
    edges_arr = np.empty(B + 1)
    cdef double[:, ::1] dens = dens_arr
    cdef long long[:, ::1] cross = cross_arr
    cdef double[:, :, ::1] hist = hist_arr
    cdef double[::1] rates = rates_arr
    cdef double[::1] edges = edges_arr

    cdef bitgen_t* rng = <bitgen_t*> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")
    cdef double R = 0.0
    cdef double width = (t_end - t_burn) / B
    cdef Py_ssize_t k, s, j, i, last, cb = 0
    cdef double t = 0.0, t_next, u, target, acc
    cdef long long n_events = 0
    cdef bint recording
    cdef bint overflow = False

    for k in range(B):
        edges[k] = t_burn + k * width
    edges[B] = t_end

    with bit_generator.lock, nogil:
        for j in range(N):
            _refresh_site(eta, rates, j, N, m, b1, d1, bN, dN, &R)
        R = _resum(rates, K)

        while True:
            u = rng.next_double(rng.state)
            t_next = t + (-log(1.0 - u) / R)
            cb = _accumulate(t, t_next if t_next < t_end else t_end, t_burn, edges, cb, B, N, H,
                             eta, dens, hist)
            if t_next >= t_end:
                break
            t = t_next
            target = rng.next_double(rng.state) * R
            acc = 0.0
            k = -1
            last = -1
            for s in range(K):
                if rates[s] > 0.0:
                    last = s
                    acc += rates[s]
                    if target < acc:
                        k = s
                        break
            if k < 0:
                k = last

            recording = t >= t_burn
            if recording:
                while cb < B - 1 and t >= edges[cb + 1]:
                    cb += 1
            if k < N - 1:
                eta[k] -= 1
                eta[k + 1] += 1
                if eta[k + 1] >= MAX_OCCUPATION:
                    overflow = True
                    break
                if recording:
                    cross[cb, k] += 1
                _refresh_site(eta, rates, k, N, m, b1, d1, bN, dN, &R)
                _refresh_site(eta, rates, k + 1, N, m, b1, d1, bN, dN, &R)
            elif k < 2 * N - 2:
                i = k - (N - 1)
                eta[i + 1] -= 1
                eta[i] += 1
                if eta[i] >= MAX_OCCUPATION:
                    overflow = True
                    break
                if recording:
                    cross[cb, i] -= 1
                _refresh_site(eta, rates, i, N, m, b1, d1, bN, dN, &R)
                _refresh_site(eta, rates, i + 1, N, m, b1, d1, bN, dN, &R)
            elif k == 2 * N - 2:
                eta[0] += 1
                if eta[0] >= MAX_OCCUPATION:
                    overflow = True
                    break
                _refresh_site(eta, rates, 0, N, m, b1, d1, bN, dN, &R)
            elif k == 2 * N - 1:
                eta[0] -= 1
                _refresh_site(eta, rates, 0, N, m, b1, d1, bN, dN, &R)
            elif k == 2 * N:
                eta[N - 1] += 1
                if eta[N - 1] >= MAX_OCCUPATION:
                    overflow = True
                    break
                _refresh_site(eta, rates, N - 1, N, m, b1, d1, bN, dN, &R)
            else:
                eta[N - 1] -= 1
                _refresh_site(eta, rates, N - 1, N, m, b1, d1, bN, dN, &R)
            n_events += 1
            if n_events % RESUM_EVERY == 0:
                R = _resum(rates, K)

    if overflow:
        raise OverflowError("occupation overflow")
    return np.asarray(eta).copy(), dens_arr, cross_arr, hist_arr, int(n_events)
