"""Pure-Python event loop; reference semantics for the compiled kernel in ``_kmc_core.pyx``.

Both implementations consume uniforms from the same bit generator in the same
order and perform the same floating-point operations, so for equal inputs they
return bit-identical results.

Rate slots (``K = 2N + 2``)::

    0 .. N-2        right jump across bond i     eta_i (m + eta_{i+1})
    N-1 .. 2N-3     left jump across bond i      eta_{i+1} (m + eta_i)
    2N-2, 2N-1      birth / death at site 0      b1 (m + eta_0), d1 eta_0
    2N, 2N+1        birth / death at site N-1    bN (m + eta_{N-1}), dN eta_{N-1}
"""
import math

import numpy as np

_BLOCK = 4096
RESUM_EVERY = 1024
MAX_OCCUPATION = 2**62


class _Uniforms:
    def __init__(self, bit_generator):
        self._gen = np.random.Generator(bit_generator)
        self._buf = []
        self._pos = 0

    def next(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._gen.random(_BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def simulate_chain(eta0, m, b1, d1, bN, dN, t_burn, t_end, n_batches, hist_max, bit_generator):
    """Run one trajectory on ``[0, t_end)`` and collect batch statistics on ``[t_burn, t_end)``.

    Returns ``(eta_final, occupation_integrals, net_crossings, histogram_time, n_events)``
    with shapes ``(N,)``, ``(B, N)``, ``(B, N-1)``, ``(B, N, hist_max + 2)``.
    The last histogram bin collects occupations above ``hist_max``.
    """
    eta = [int(x) for x in eta0]
    N = len(eta)
    K = 2 * N + 2
    B = int(n_batches)
    H = int(hist_max)
    dens = np.zeros((B, N))
    cross = np.zeros((B, N - 1), dtype=np.int64)
    hist = np.zeros((B, N, H + 2))
    rng = _Uniforms(bit_generator)

    rates = [0.0] * K
    R = 0.0

    def bond_rates(i):
        a = float(eta[i])
        c = float(eta[i + 1])
        return a * (m + c), c * (m + a)

    def refresh_site(j):
        nonlocal R
        if j >= 1:
            r, l = bond_rates(j - 1)
            R += r - rates[j - 1]
            rates[j - 1] = r
            R += l - rates[N - 1 + j - 1]
            rates[N - 1 + j - 1] = l
        if j <= N - 2:
            r, l = bond_rates(j)
            R += r - rates[j]
            rates[j] = r
            R += l - rates[N - 1 + j]
            rates[N - 1 + j] = l
        if j == 0:
            x = float(eta[0])
            v = b1 * (m + x)
            R += v - rates[2 * N - 2]
            rates[2 * N - 2] = v
            v = d1 * x
            R += v - rates[2 * N - 1]
            rates[2 * N - 1] = v
        if j == N - 1:
            x = float(eta[N - 1])
            v = bN * (m + x)
            R += v - rates[2 * N]
            rates[2 * N] = v
            v = dN * x
            R += v - rates[2 * N + 1]
            rates[2 * N + 1] = v

    def resum():
        total = 0.0
        for r in rates:
            total += r
        return total

    for j in range(N):
        refresh_site(j)
    R = resum()

    width = (t_end - t_burn) / B
    edges = [t_burn + k * width for k in range(B)] + [t_end]
    cb = 0

    def accumulate(a, c):
        nonlocal cb
        if c <= t_burn:
            return
        if a < t_burn:
            a = t_burn
        while a < c:
            while cb < B - 1 and a >= edges[cb + 1]:
                cb += 1
            stop = edges[cb + 1]
            seg_end = c if c < stop else stop
            seg = seg_end - a
            row_d = dens[cb]
            row_h = hist[cb]
            for i in range(N):
                x = eta[i]
                row_d[i] += x * seg
                row_h[i, x if x <= H else H + 1] += seg
            a = seg_end

    t = 0.0
    n_events = 0
    while True:
        u = rng.next()
        t_next = t + (-math.log(1.0 - u) / R)
        accumulate(t, t_next if t_next < t_end else t_end)
        if t_next >= t_end:
            break
        t = t_next
        target = rng.next() * R
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
                raise OverflowError("occupation overflow")
            if recording:
                cross[cb, k] += 1
            refresh_site(k)
            refresh_site(k + 1)
        elif k < 2 * N - 2:
            i = k - (N - 1)
            eta[i + 1] -= 1
            eta[i] += 1
            if eta[i] >= MAX_OCCUPATION:
                raise OverflowError("occupation overflow")
            if recording:
                cross[cb, i] -= 1
            refresh_site(i)
            refresh_site(i + 1)
        elif k == 2 * N - 2:
            eta[0] += 1
            if eta[0] >= MAX_OCCUPATION:
                raise OverflowError("occupation overflow")
            refresh_site(0)
        elif k == 2 * N - 1:
            eta[0] -= 1
            refresh_site(0)
        elif k == 2 * N:
            eta[N - 1] += 1
            if eta[N - 1] >= MAX_OCCUPATION:
                raise OverflowError("occupation overflow")
            refresh_site(N - 1)
        else:
            eta[N - 1] -= 1
            refresh_site(N - 1)
        n_events += 1
        if n_events % RESUM_EVERY == 0:
            R = resum()

    return np.array(eta, dtype=np.int64), dens, cross, hist, n_events
