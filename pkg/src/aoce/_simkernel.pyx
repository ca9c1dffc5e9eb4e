# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernel. Mirrors ``_simkernel_py.run_chunk`` step for
step, including the order of floating-point additions."""

KIND_TABLE = 0
KIND_RANDOMIZED = 1
KIND_PERIODIC = 2
KIND_REACTIVE = 3
KIND_AOI = 4
KIND_AOII = 5


def run_chunk(long long[::1] state, const double[::1] u_src, const double[::1] u_ch, const double[::1] u_pol,
              const double[:, ::1] qcum, const double[:, :, ::1] ctab, int kind,
              const signed char[:, :, ::1] act, const signed char[::1] act_aoi,
              double param, long long period, double lam, double p_s, long long n_cap,
              double[::1] batch_sums, long long batch_len, long long t0, long long[::1] counters):
    cdef Py_ssize_t n = u_src.shape[0]
    cdef Py_ssize_t t
    cdef int M = qcum.shape[0]
    cdef int k
    cdef long long L = ctab.shape[2]
    cdef long long nb = batch_sums.shape[0]
    cdef long long x = state[0], xh = state[1], d = state[2], xp = state[3]
    cdef long long aoi = state[4], aoii = state[5]
    cdef long long x2, xh2, d2, gt, b
    cdef long long n_tx = counters[0], n_err = counters[1]
    cdef int a
    cdef int flag = 0
    cdef double c, u
    with nogil:
        for t in range(n):
            if d >= L:
                flag = -1
                break
            gt = t0 + t
            c = ctab[x, xh, d]
            if kind == 0:
                a = act[x, xh, d if d < n_cap else n_cap]
            elif kind == 1:
                a = 1 if u_pol[t] < param else 0
            elif kind == 2:
                a = 1 if (gt + 1) % period == 0 else 0
            elif kind == 3:
                a = 1 if x != xp else 0
            elif kind == 4:
                a = act_aoi[aoi if aoi < n_cap else n_cap]
            else:
                a = act[x, xh, aoii if aoii < n_cap else n_cap]
            if a:
                c += lam
                n_tx += 1
            if x != xh:
                n_err += 1
            b = gt // batch_len
            if b >= nb:
                b = nb - 1
            batch_sums[b] += c

            u = u_src[t]
            x2 = M - 1
            for k in range(M):
                if u < qcum[x, k]:
                    x2 = k
                    break
            if a and u_ch[t] < p_s:
                xh2 = x
                aoi = 1
            else:
                xh2 = xh
                aoi += 1
            if x2 == xh2:
                d2 = 0
                aoii = 0
            else:
                aoii += 1
                d2 = d + 1 if (x2 == x and xh2 == xh) else 1
            xp = x
            x = x2
            xh = xh2
            d = d2
    state[0] = x
    state[1] = xh
    state[2] = d
    state[3] = xp
    state[4] = aoi
    state[5] = aoii
    counters[0] = n_tx
    counters[1] = n_err
    if flag:
        counters[2] = 1
    return flag
