# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, nonecheck=False
"""Compiled propagation kernels for Langevin-form models.

Mirrors :mod:`kinqsd._fallback` operation by operation. Every particle's
noise is a function of (seed, stream, step) only, so the per-particle loops
may run in any order or thread layout with identical results.
"""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport sqrt, log, floor, isfinite, fabs
from libc.stdint cimport uint32_t, uint64_t, int64_t, int8_t

cdef extern from "math.h" nogil:
    void sincos(double x, double* s, double* c)

cdef enum:
    MAXD = 8
    SPLIT = 0
    EULER = 1
    SUBSTEP = 0
    ENDPOINT = 1
    D_FULL = 0
    D_INTERVAL = 1
    D_BALL = 2
    D_BOX = 3
    D_HALF = 4
    F_ZERO = 0
    F_HARMONIC = 1
    F_DOUBLE_WELL = 2
    F_NONCONS = 3
    F_CONST = 4
    TAG_NOISE = 0
    TAG_RESAMPLE = 1

cdef double TWO_M53 = 1.1102230246251565e-16
cdef double TWO_PI = 6.283185307179586
cdef double GUARD = 1e12
cdef uint64_t MASK32 = 0xFFFFFFFFULL
cdef uint64_t MASK16 = 0xFFFFULL
cdef uint32_t W0 = 0x9E3779B9U
cdef uint32_t W1 = 0xBB67AE85U
cdef uint64_t M0 = 0xD2511F53ULL
cdef uint64_t M1 = 0xCD9E8D57ULL

cdef struct Params:
    int dim
    int force_code
    double fp[8]
    double gamma
    int scheme
    double c_half
    double ou
    double dt
    double em_noise
    int dom
    double dp[17]
    int crossing
    uint32_t key0
    uint32_t key1
    double thr


cdef inline void philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint32_t c0 = c[0], c1 = c[1], c2 = c[2], c3 = c[3], n0, n2
    cdef uint64_t prod0, prod1
    cdef int r
    for r in range(10):
        if r > 0:
            k0 = k0 + W0
            k1 = k1 + W1
        prod0 = M0 * <uint64_t>c0
        prod1 = M1 * <uint64_t>c2
        n0 = (<uint32_t>(prod1 >> 32)) ^ c1 ^ k0
        n2 = (<uint32_t>(prod0 >> 32)) ^ c3 ^ k1
        c1 = <uint32_t>prod1
        c3 = <uint32_t>prod0
        c0 = n0
        c2 = n2
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3


cdef inline void fill_counter(uint32_t* c, uint64_t step, uint64_t stream,
                              uint64_t block, uint64_t tag) noexcept nogil:
    c[0] = <uint32_t>(step & MASK32)
    c[1] = <uint32_t>(((step >> 32) & MASK16) | (block << 16) | (tag << 24))
    c[2] = <uint32_t>(stream & MASK32)
    c[3] = <uint32_t>(stream >> 32)


cdef inline void gauss(const Params* P, uint64_t stream, uint64_t step, int count,
                       double* z) noexcept nogil:
    cdef int b, nb = (count + 1) // 2
    cdef uint32_t c[4]
    cdef uint64_t a, bb
    cdef double u1, u2, r, sn, cs
    for b in range(nb):
        fill_counter(c, step, stream, <uint64_t>b, TAG_NOISE)
        philox(c, P.key0, P.key1)
        a = ((<uint64_t>c[0]) << 32) | <uint64_t>c[1]
        bb = ((<uint64_t>c[2]) << 32) | <uint64_t>c[3]
        u1 = (<double>(a >> 11) + 1.0) * TWO_M53
        u2 = (<double>(bb >> 11)) * TWO_M53
        r = sqrt(-2.0 * log(u1))
        sincos(TWO_PI * u2, &sn, &cs)
        z[2 * b] = r * cs
        z[2 * b + 1] = r * sn


cdef inline double uniform(const Params* P, uint64_t stream, uint64_t step,
                           uint64_t tag) noexcept nogil:
    cdef uint32_t c[4]
    cdef uint64_t a
    fill_counter(c, step, stream, 0, tag)
    philox(c, P.key0, P.key1)
    a = ((<uint64_t>c[0]) << 32) | <uint64_t>c[1]
    return (<double>(a >> 11)) * TWO_M53


cdef inline void force(const Params* P, const double* q, double* f) noexcept nogil:
    cdef int j, d = P.dim
    cdef double r2 = 0.0, coef, nq
    for j in range(d):
        r2 = r2 + q[j] * q[j]
    if P.force_code == F_HARMONIC:
        coef = P.fp[0] * P.fp[0]
        for j in range(d):
            f[j] = -(coef * q[j])
    elif P.force_code == F_DOUBLE_WELL:
        coef = 4.0 * P.fp[0] * (r2 - P.fp[1] * P.fp[1])
        for j in range(d):
            f[j] = -(coef * q[j])
    elif P.force_code == F_NONCONS:
        coef = P.fp[0] * r2 + P.fp[1] * P.fp[1]
        nq = 1.0 + sqrt(r2)
        for j in range(d):
            f[j] = -(coef * q[j]) - P.fp[2] * q[j] / nq
    elif P.force_code == F_CONST:
        for j in range(d):
            f[j] = P.fp[j]
    else:
        for j in range(d):
            f[j] = 0.0


cdef inline double norm(const double* v, int d) noexcept nogil:
    cdef double s = 0.0
    cdef int j
    for j in range(d):
        s = s + v[j] * v[j]
    return sqrt(s)


cdef inline bint inside(const Params* P, const double* q) noexcept nogil:
    cdef int j, d = P.dim
    cdef double s
    if P.dom == D_FULL:
        return True
    if P.dom == D_INTERVAL:
        return q[0] > P.dp[0] and q[0] < P.dp[1]
    if P.dom == D_BALL:
        s = 0.0
        for j in range(d):
            s = s + (q[j] - P.dp[j]) * (q[j] - P.dp[j])
        return P.dp[d] - sqrt(s) > 0.0
    if P.dom == D_BOX:
        for j in range(d):
            if not (q[j] > P.dp[j] and q[j] < P.dp[d + j]):
                return False
        return True
    # half-space
    s = 0.0
    for j in range(d):
        s = s + P.dp[j] * q[j]
    return P.dp[d] - s > 0.0


cdef inline double crossing_fraction(const Params* P, const double* q0,
                                     const double* q1) noexcept nogil:
    cdef int j, d = P.dim
    cdef double s = 1.0, t, a, b, cc, disc, x, dl, g0, g1
    if P.dom == D_INTERVAL:
        t = P.dp[1] if q1[0] >= P.dp[1] else P.dp[0]
        dl = q1[0] - q0[0]
        s = (t - q0[0]) / dl if dl != 0.0 else 1.0
    elif P.dom == D_BALL:
        a = 0.0
        b = 0.0
        cc = 0.0
        for j in range(d):
            x = q0[j] - P.dp[j]
            dl = q1[j] - q0[j]
            a = a + dl * dl
            b = b + x * dl
            cc = cc + x * x
        b = 2.0 * b
        cc = cc - P.dp[d] * P.dp[d]
        disc = b * b - 4.0 * a * cc
        disc = sqrt(disc) if disc > 0.0 else 0.0
        if b > 0.0:
            s = -2.0 * cc / (b + disc)
        elif a > 0.0:
            s = (disc - b) / (2.0 * a)
        else:
            s = 1.0
    elif P.dom == D_BOX:
        s = 1e308
        for j in range(d):
            dl = q1[j] - q0[j]
            if q1[j] >= P.dp[d + j]:
                t = (P.dp[d + j] - q0[j]) / dl
                if t < s:
                    s = t
            if q1[j] <= P.dp[j]:
                t = (P.dp[j] - q0[j]) / dl
                if t < s:
                    s = t
        if s > 1e307:
            s = 1.0
    elif P.dom == D_HALF:
        g0 = 0.0
        g1 = 0.0
        for j in range(d):
            g0 = g0 + P.dp[j] * q0[j]
            g1 = g1 + P.dp[j] * q1[j]
        g0 = P.dp[d] - g0
        g1 = P.dp[d] - g1
        s = g0 / (g0 - g1) if g0 != g1 else 1.0
    if not (s == s):
        s = 1.0
    if s < 0.0:
        s = 0.0
    if s > 1.0:
        s = 1.0
    return s


cdef inline void project(const Params* P, double* q, double* nrm) noexcept nogil:
    """Move q onto the boundary (closest point) and write the outward normal."""
    cdef int j, d = P.dim, face, ax
    cdef double r, g, best, fd
    if P.dom == D_INTERVAL:
        if q[0] >= 0.5 * (P.dp[0] + P.dp[1]):
            q[0] = P.dp[1]
            nrm[0] = 1.0
        else:
            q[0] = P.dp[0]
            nrm[0] = -1.0
    elif P.dom == D_BALL:
        for j in range(d):
            nrm[j] = q[j] - P.dp[j]
        r = norm(nrm, d)
        if r > 0.0:
            for j in range(d):
                nrm[j] = nrm[j] / r
        else:
            for j in range(d):
                nrm[j] = 0.0
            nrm[0] = 1.0
        for j in range(d):
            q[j] = P.dp[j] + P.dp[d] * nrm[j]
    elif P.dom == D_BOX:
        for j in range(d):
            if q[j] < P.dp[j]:
                q[j] = P.dp[j]
            elif q[j] > P.dp[d + j]:
                q[j] = P.dp[d + j]
        face = 0
        best = 1e308
        for j in range(2 * d):
            if j < d:
                fd = q[j] - P.dp[j]
            else:
                fd = P.dp[j] - q[j - d]
            if fd < best:
                best = fd
                face = j
        ax = face % d
        for j in range(d):
            nrm[j] = 0.0
        if face < d:
            q[ax] = P.dp[ax]
            nrm[ax] = -1.0
        else:
            q[ax] = P.dp[d + ax]
            nrm[ax] = 1.0
    elif P.dom == D_HALF:
        g = 0.0
        for j in range(d):
            g = g + q[j] * P.dp[j]
        g = P.dp[d] - g
        for j in range(d):
            q[j] = q[j] + g * P.dp[j]
            nrm[j] = P.dp[j]


cdef inline void update_track(int d, const double* q, const double* p, const double* x0,
                              double* trk) noexcept nogil:
    cdef double nq = 0.0, np_ = 0.0, dq = 0.0, dp = 0.0, v
    cdef int j
    for j in range(d):
        nq = nq + q[j] * q[j]
        np_ = np_ + p[j] * p[j]
        v = q[j] - x0[j]
        dq = dq + v * v
        v = p[j] - x0[d + j]
        dp = dp + v * v
    v = sqrt(nq) + sqrt(np_)
    v = v * v
    if v > trk[0]:
        trk[0] = v
    v = sqrt(dq) + sqrt(dp)
    if v > trk[1]:
        trk[1] = v


cdef int run_particle(const Params* P, double* q, double* p, uint64_t stream,
                      int64_t k0, int64_t k1, double* etime, int8_t* outgoing,
                      int8_t* substep, double* trk, const double* x0) noexcept nogil:
    """Advance one particle over steps [k0, k1). Returns 0 alive, 1 exited, 2 blow-up."""
    cdef double qn[MAXD]
    cdef double pn[MAXD]
    cdef double pf[MAXD]
    cdef double f[MAXD]
    cdef double nrm[MAXD]
    cdef double z[2 * MAXD + 2]
    cdef int j, d = P.dim
    cdef int64_t k
    cdef double s, pdotn, pnorm, h = 0.5 * P.dt
    for k in range(k0, k1):
        if P.scheme == SPLIT:
            gauss(P, stream, <uint64_t>k, 2 * d, z)
            for j in range(d):
                pf[j] = P.c_half * p[j] + P.ou * z[j]
            force(P, q, f)
            for j in range(d):
                pf[j] = pf[j] + h * f[j]
                qn[j] = q[j] + P.dt * pf[j]
            force(P, qn, f)
            for j in range(d):
                pn[j] = pf[j] + h * f[j]
                pn[j] = P.c_half * pn[j] + P.ou * z[d + j]
        else:
            gauss(P, stream, <uint64_t>k, d, z)
            force(P, q, f)
            for j in range(d):
                pf[j] = p[j]
                qn[j] = q[j] + P.dt * p[j]
                pn[j] = p[j] + P.dt * (f[j] - P.gamma * p[j]) + P.em_noise * z[j]
        for j in range(d):
            if not (isfinite(qn[j]) and isfinite(pn[j])) or fabs(qn[j]) > GUARD \
                    or fabs(pn[j]) > GUARD:
                return 2
        if not inside(P, qn):
            if P.crossing == SUBSTEP:
                s = crossing_fraction(P, q, qn)
                for j in range(d):
                    q[j] = q[j] + s * (qn[j] - q[j])
                substep[0] = 1
            else:
                s = 1.0
                for j in range(d):
                    q[j] = qn[j]
                substep[0] = 0
            project(P, q, nrm)
            pdotn = 0.0
            for j in range(d):
                p[j] = pf[j]
                pdotn = pdotn + p[j] * nrm[j]
            pnorm = norm(p, d)
            outgoing[0] = 1 if pdotn > P.thr * (1.0 + pnorm) else 0
            etime[0] = (<double>k + s) * P.dt
            if trk != NULL:
                update_track(d, q, p, x0, trk)
            return 1
        for j in range(d):
            q[j] = qn[j]
            p[j] = pn[j]
        if trk != NULL:
            update_track(d, q, p, x0, trk)
    return 0


cdef void fill_params(Params* P, tuple spec) except *:
    (dim, force_code, force_params, gamma, scheme, c_half, ou, dt, em_noise,
     dom, dom_params, crossing, seed, thr) = spec
    if dim > MAXD:
        raise ValueError("compiled kernels support dim <= 8")
    P.dim = dim
    P.force_code = force_code
    for j in range(8):
        P.fp[j] = force_params[j] if j < len(force_params) else 0.0
    P.gamma = gamma
    P.scheme = scheme
    P.c_half = c_half
    P.ou = ou
    P.dt = dt
    P.em_noise = em_noise
    P.dom = dom
    for j in range(17):
        P.dp[j] = dom_params[j] if j < len(dom_params) else 0.0
    P.crossing = crossing
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    P.key0 = <uint32_t>(seed & 0xFFFFFFFF)
    P.key1 = <uint32_t>(seed >> 32)
    P.thr = thr


def propagate(double[:, ::1] q, double[:, ::1] p, const uint64_t[::1] streams,
              int64_t k_start, int64_t k_end, tuple spec, int8_t[::1] status,
              double[::1] etime, int8_t[::1] outgoing, int8_t[::1] substep,
              track=None, x0=None, int nthreads=1):
    """Advance every particle with ``status == 0`` over steps [k_start, k_end)."""
    cdef Params P
    fill_params(&P, spec)
    cdef Py_ssize_t n = q.shape[0], i
    cdef double[:, ::1] trk
    cdef double[:, ::1] xs
    cdef bint use_track = track is not None
    cdef int code
    if use_track:
        trk = track
        xs = x0
    else:
        trk = np.zeros((1, 2))
        xs = np.zeros((1, 2 * P.dim))
    with nogil:
        for i in prange(n, num_threads=nthreads, schedule="static"):
            if status[i] == 0:
                if use_track:
                    code = run_particle(&P, &q[i, 0], &p[i, 0], streams[i], k_start, k_end,
                                        &etime[i], &outgoing[i], &substep[i], &trk[i, 0],
                                        &xs[i, 0])
                else:
                    code = run_particle(&P, &q[i, 0], &p[i, 0], streams[i], k_start, k_end,
                                        &etime[i], &outgoing[i], &substep[i], NULL, NULL)
                status[i] = <int8_t>code


cdef inline int64_t bin_index(const double* q, const double* p, int d, const double* lo,
                              const double* hi, const int64_t* nb) noexcept nogil:
    cdef int a
    cdef int64_t flat = 0, b
    cdef double x
    for a in range(2 * d):
        x = q[a] if a < d else p[a - d]
        if not (x >= lo[a] and x < hi[a]):
            return -1
        b = <int64_t>floor((x - lo[a]) / (hi[a] - lo[a]) * nb[a])
        if b >= nb[a]:
            b = nb[a] - 1
        flat = flat * nb[a] + b
    return flat


def histogram(const double[:, ::1] q, const double[:, ::1] p, const double[::1] lo,
              const double[::1] hi, const int64_t[::1] nb, int64_t[::1] counts):
    """Accumulate counts; the last slot of ``counts`` is the overflow bin."""
    cdef Py_ssize_t i, n = q.shape[0]
    cdef int d = q.shape[1]
    cdef int64_t b, over = counts.shape[0] - 1
    for i in range(n):
        b = bin_index(&q[i, 0], &p[i, 0], d, &lo[0], &hi[0], &nb[0])
        counts[b if b >= 0 else over] += 1


def fv_run(double[:, ::1] q, double[:, ::1] p, const uint64_t[::1] streams,
           int64_t k_start, int64_t n_steps, tuple spec, const int64_t[::1] record_block,
           const double[::1] lo, const double[::1] hi, const int64_t[::1] nb,
           int64_t[:, ::1] counts, int64_t[::1] kills, int nthreads=1):
    """Fleming-Viot loop: synchronised one-step epochs, uniform survivor resampling.

    Returns ``(code, epoch, index)``: code 0 finished, 1 extinction at
    ``epoch``, 2 blow-up of particle ``index`` at ``epoch``.
    """
    cdef Params P
    fill_params(&P, spec)
    cdef Py_ssize_t n = q.shape[0], i, m, j
    cdef int d = P.dim, a
    cdef int64_t e, k, ns, nexit, blk, b, over = counts.shape[1] - 1
    cdef int8_t[::1] status = np.zeros(n, dtype=np.int8)
    cdef int8_t[::1] outg = np.zeros(n, dtype=np.int8)
    cdef int8_t[::1] sub = np.zeros(n, dtype=np.int8)
    cdef double[::1] et = np.zeros(n)
    cdef int64_t[::1] surv = np.zeros(n, dtype=np.int64)
    cdef double u
    for e in range(n_steps):
        k = k_start + e
        with nogil:
            for i in prange(n, num_threads=nthreads, schedule="static"):
                status[i] = <int8_t>run_particle(&P, &q[i, 0], &p[i, 0], streams[i], k, k + 1,
                                                 &et[i], &outg[i], &sub[i], NULL, NULL)
        ns = 0
        nexit = 0
        for i in range(n):
            if status[i] == 2:
                return 2, e, i
            if status[i] == 0:
                surv[ns] = i
                ns += 1
            else:
                nexit += 1
        kills[e] = nexit
        if ns == 0:
            return 1, e, -1
        if nexit > 0:
            m = 0
            for i in range(n):
                if status[i] == 1:
                    u = uniform(&P, <uint64_t>m, <uint64_t>k, TAG_RESAMPLE)
                    j = surv[<int64_t>(u * ns)]
                    for a in range(d):
                        q[i, a] = q[j, a]
                        p[i, a] = p[j, a]
                    m += 1
        blk = record_block[e]
        if blk >= 0:
            for i in range(n):
                b = bin_index(&q[i, 0], &p[i, 0], d, &lo[0], &hi[0], &nb[0])
                counts[blk, b if b >= 0 else over] += 1
    return 0, n_steps, -1


def philox_words(counter, key):
    """Raw Philox4x32-10 block (test hook)."""
    cdef uint32_t c[4]
    for j in range(4):
        c[j] = <uint32_t>counter[j]
    philox(c, <uint32_t>key[0], <uint32_t>key[1])
    return [c[0], c[1], c[2], c[3]]


def gauss_block(uint64_t seed, uint64_t stream, uint64_t step, int count):
    """Standard normals for one (stream, step) pair (test hook)."""
    cdef Params P
    cdef double z[2 * MAXD + 2]
    if count > 2 * MAXD:
        raise ValueError("count too large")
    P.key0 = <uint32_t>(seed & 0xFFFFFFFF)
    P.key1 = <uint32_t>(seed >> 32)
    gauss(&P, stream, step, count, z)
    return [z[j] for j in range(count)]
