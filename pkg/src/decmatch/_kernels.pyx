# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels; a line-for-line port of ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport int32_t, int64_t, uint64_t
from libc.stdlib cimport free, malloc, realloc

cnp.import_array()

BACKEND = "cython"

cdef enum:
    NO_RANK = 1 << 30


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef struct Rng:
    uint64_t state


cdef inline uint64_t next_u64(Rng* r) noexcept nogil:
    r.state += <uint64_t>0x9E3779B97F4A7C15
    return mix64(r.state)


cdef inline int64_t below(Rng* r, uint64_t k) noexcept nogil:
    # ((x >> 11) * k) >> 53 without 128-bit arithmetic; exact for k < 2**32
    cdef uint64_t a = next_u64(r) >> 11
    cdef uint64_t hi = (a >> 32) * k
    cdef uint64_t lo = (a & <uint64_t>0xFFFFFFFF) * k
    return <int64_t>((hi + (lo >> 32)) >> 21)


cdef inline double unit(Rng* r) noexcept nogil:
    return <double>(next_u64(r) >> 11) * (1.0 / 9007199254740992.0)


cdef Py_ssize_t draw(Rng* r, int64_t* gains, double* w, Py_ssize_t k, int rule, double lam) noexcept nogil:
    cdef Py_ssize_t i
    cdef int64_t gmax
    cdef double total, u, acc
    if k == 1:
        return 0
    if rule == 0:
        return below(r, k)
    if rule == 1:
        for i in range(k):
            w[i] = <double>gains[i]
    else:
        gmax = gains[0]
        for i in range(1, k):
            if gains[i] > gmax:
                gmax = gains[i]
        for i in range(k):
            w[i] = exp(lam * <double>(gains[i] - gmax))
    total = 0.0
    for i in range(k):
        total += w[i]
    u = unit(r) * total
    acc = 0.0
    for i in range(k):
        acc += w[i]
        if u < acc:
            return i
    return k - 1


cdef struct Buf:
    int32_t* data
    Py_ssize_t n
    Py_ssize_t cap


cdef int push(Buf* b, int side, int a, int t, int acc) noexcept nogil:
    cdef int32_t* grown
    if b.n == b.cap:
        b.cap = b.cap * 2 if b.cap else 256
        grown = <int32_t*>realloc(b.data, 4 * b.cap * sizeof(int32_t))
        if grown == NULL:
            return -1
        b.data = grown
    b.data[4 * b.n] = side
    b.data[4 * b.n + 1] = a
    b.data[4 * b.n + 2] = t
    b.data[4 * b.n + 3] = acc
    b.n += 1
    return 0


cdef inline void link(int32_t* fp, int32_t* cp, int f, int c) noexcept nogil:
    if fp[f] >= 0:
        cp[fp[f]] = -1
    if cp[c] >= 0:
        fp[cp[c]] = -1
    fp[f] = c
    cp[c] = f


cdef class _Work:
    """Scratch arrays for one run, freed on collection."""
    cdef int32_t* fp
    cdef int32_t* cp
    cdef int64_t* gains
    cdef double* w
    cdef int32_t* cand
    cdef int32_t* ia
    cdef int32_t* ib
    cdef int32_t* ic
    cdef int32_t* id
    cdef char* fx
    cdef char* cx
    cdef int32_t* stack
    cdef Py_ssize_t stack_cap
    cdef Buf buf

    def __cinit__(self, int nf, int nc):
        cdef Py_ssize_t m = nf * nc + nf + nc + 4
        self.fp = <int32_t*>malloc(nf * sizeof(int32_t))
        self.cp = <int32_t*>malloc(nc * sizeof(int32_t))
        self.gains = <int64_t*>malloc(m * sizeof(int64_t))
        self.w = <double*>malloc(m * sizeof(double))
        self.cand = <int32_t*>malloc(3 * m * sizeof(int32_t))
        self.ia = <int32_t*>malloc((nf + nc) * sizeof(int32_t))
        self.ib = <int32_t*>malloc((nf + nc) * sizeof(int32_t))
        self.ic = <int32_t*>malloc((nf + nc) * sizeof(int32_t))
        self.id = <int32_t*>malloc((nf + nc) * sizeof(int32_t))
        self.fx = <char*>malloc(m)
        self.cx = <char*>malloc(m)
        self.stack = NULL
        self.stack_cap = 0
        self.buf.data = NULL
        self.buf.n = 0
        self.buf.cap = 0
        if (self.fp == NULL or self.cp == NULL or self.gains == NULL or self.w == NULL
                or self.cand == NULL or self.ia == NULL or self.ib == NULL or self.ic == NULL
                or self.id == NULL or self.fx == NULL or self.cx == NULL):
            raise MemoryError()

    def __dealloc__(self):
        free(self.fp); free(self.cp); free(self.gains); free(self.w); free(self.cand)
        free(self.ia); free(self.ib); free(self.ic); free(self.id)
        free(self.fx); free(self.cx); free(self.stack); free(self.buf.data)


def simulate(int algo, int rule, double lam, uint64_t seed, Py_ssize_t max_steps,
             const int64_t[:, ::1] pay_f, const int64_t[:, ::1] pay_c,
             const int64_t[:, ::1] food_lists, const int64_t[:, ::1] color_lists,
             const int64_t[:, ::1] food_rank, const int64_t[:, ::1] color_rank):
    """Run one dynamics; returns ``(events[T, 4] int32, food_partner list, capped)``."""
    cdef int nf = pay_f.shape[0]
    cdef int nc = pay_f.shape[1]
    cdef _Work wk = _Work(nf, nc)
    cdef Rng rng
    cdef int status, i
    rng.state = seed
    for i in range(nf):
        wk.fp[i] = -1
    for i in range(nc):
        wk.cp[i] = -1
    if algo == 0:
        with nogil:
            status = _two_rda(&rng, rule, lam, max_steps, pay_f, pay_c, food_lists, color_lists,
                              food_rank, color_rank, wk.fp, wk.cp, wk.gains, wk.w, wk.cand,
                              wk.ia, wk.ib, wk.ic, wk.id, &wk.buf)
    elif algo == 1:
        status = _dacc(&rng, rule, lam, max_steps, pay_f, pay_c, food_lists, color_lists,
                       food_rank, color_rank, wk)
    elif algo == 2:
        with nogil:
            status = _rps(&rng, rule, lam, max_steps, pay_f, pay_c, wk.fp, wk.cp,
                          wk.gains, wk.w, wk.cand, &wk.buf)
    elif algo == 3:
        with nogil:
            status = _rbr(&rng, rule, lam, max_steps, pay_f, pay_c, food_lists, color_lists,
                          wk.fp, wk.cp, wk.gains, wk.w, wk.cand, &wk.buf)
    else:
        raise ValueError(f"unknown algorithm code {algo}")
    if status < 0:
        raise MemoryError()
    events = np.empty((wk.buf.n, 4), dtype=np.int32)
    cdef int32_t[:, ::1] ev = events
    cdef Py_ssize_t e
    for e in range(wk.buf.n):
        ev[e, 0] = wk.buf.data[4 * e]
        ev[e, 1] = wk.buf.data[4 * e + 1]
        ev[e, 2] = wk.buf.data[4 * e + 2]
        ev[e, 3] = wk.buf.data[4 * e + 3]
    return events, [wk.fp[i] for i in range(nf)], status == 1


cdef int _rps(Rng* rng, int rule, double lam, Py_ssize_t max_steps,
              const int64_t[:, ::1] pay_f, const int64_t[:, ::1] pay_c,
              int32_t* fp, int32_t* cp, int64_t* gains, double* w, int32_t* cand, Buf* buf) noexcept nogil:
    cdef int nf = pay_f.shape[0]
    cdef int nc = pay_f.shape[1]
    cdef int f, c
    cdef int64_t uf, gf, gc
    cdef Py_ssize_t k, i
    # colors' current payoffs live past the candidate slots
    cdef int64_t* uc = gains + nf * nc + nf
    while True:
        for c in range(nc):
            uc[c] = pay_c[cp[c], c] if cp[c] >= 0 else 0
        k = 0
        for f in range(nf):
            uf = pay_f[f, fp[f]] if fp[f] >= 0 else 0
            for c in range(nc):
                gf = pay_f[f, c] - uf
                if gf > 0:
                    gc = pay_c[f, c] - uc[c]
                    if gc > 0:
                        cand[2 * k] = f
                        cand[2 * k + 1] = c
                        gains[k] = gf + gc
                        k += 1
        if k == 0:
            return 0
        if buf.n >= max_steps:
            return 1
        i = draw(rng, gains, w, k, rule, lam)
        f = cand[2 * i]
        c = cand[2 * i + 1]
        link(fp, cp, f, c)
        if push(buf, 0, f, c, 1) < 0:
            return -1


cdef int _rbr(Rng* rng, int rule, double lam, Py_ssize_t max_steps,
              const int64_t[:, ::1] pay_f, const int64_t[:, ::1] pay_c,
              const int64_t[:, ::1] food_lists, const int64_t[:, ::1] color_lists,
              int32_t* fp, int32_t* cp, int64_t* gains, double* w, int32_t* cand, Buf* buf) noexcept nogil:
    cdef int nf = pay_f.shape[0]
    cdef int nc = pay_f.shape[1]
    cdef int f, c, j, side, a, b
    cdef Py_ssize_t k, i
    cdef int64_t* uf = gains + nf + nc
    cdef int64_t* uc = uf + nf
    while True:
        for f in range(nf):
            uf[f] = pay_f[f, fp[f]] if fp[f] >= 0 else 0
        for c in range(nc):
            uc[c] = pay_c[cp[c], c] if cp[c] >= 0 else 0
        k = 0
        for f in range(nf):
            for j in range(nc):
                c = food_lists[f, j]
                if pay_f[f, c] <= uf[f]:
                    break
                if pay_c[f, c] > uc[c]:
                    cand[3 * k] = 0
                    cand[3 * k + 1] = f
                    cand[3 * k + 2] = c
                    gains[k] = pay_f[f, c] - uf[f]
                    k += 1
                    break
        for c in range(nc):
            for j in range(nf):
                f = color_lists[c, j]
                if pay_c[f, c] <= uc[c]:
                    break
                if pay_f[f, c] > uf[f]:
                    cand[3 * k] = 1
                    cand[3 * k + 1] = c
                    cand[3 * k + 2] = f
                    gains[k] = pay_c[f, c] - uc[c]
                    k += 1
                    break
        if k == 0:
            return 0
        if buf.n >= max_steps:
            return 1
        i = draw(rng, gains, w, k, rule, lam)
        side = cand[3 * i]
        a = cand[3 * i + 1]
        b = cand[3 * i + 2]
        if side == 0:
            link(fp, cp, a, b)
        else:
            link(fp, cp, b, a)
        if push(buf, side, a, b, 1) < 0:
            return -1


cdef int _two_rda(Rng* rng, int rule, double lam, Py_ssize_t max_steps,
                  const int64_t[:, ::1] pay_f, const int64_t[:, ::1] pay_c,
                  const int64_t[:, ::1] food_lists, const int64_t[:, ::1] color_lists,
                  const int64_t[:, ::1] food_rank, const int64_t[:, ::1] color_rank,
                  int32_t* fp, int32_t* cp, int64_t* gains, double* w, int32_t* cand,
                  int32_t* f_match, int32_t* c_match, int32_t* f_offer, int32_t* c_offer,
                  Buf* buf) noexcept nogil:
    cdef int nf = pay_f.shape[0]
    cdef int nc = pay_f.shape[1]
    cdef int f, c, r, t, side, a, accepted
    cdef Py_ssize_t k, i
    for f in range(nf):
        f_match[f] = NO_RANK
        f_offer[f] = 1
    for c in range(nc):
        c_match[c] = NO_RANK
        c_offer[c] = 1
    while True:
        k = 0
        for f in range(nf):
            r = f_offer[f]
            if r <= nc and f_match[f] > r:
                t = food_lists[f, r - 1]
                cand[3 * k] = 0
                cand[3 * k + 1] = f
                cand[3 * k + 2] = t
                gains[k] = pay_f[f, t] - (pay_f[f, fp[f]] if fp[f] >= 0 else 0)
                k += 1
        for c in range(nc):
            r = c_offer[c]
            if r <= nf and c_match[c] > r:
                t = color_lists[c, r - 1]
                cand[3 * k] = 1
                cand[3 * k + 1] = c
                cand[3 * k + 2] = t
                gains[k] = pay_c[t, c] - (pay_c[cp[c], c] if cp[c] >= 0 else 0)
                k += 1
        if k == 0:
            return 0
        if buf.n >= max_steps:
            return 1
        i = draw(rng, gains, w, k, rule, lam)
        side = cand[3 * i]
        a = cand[3 * i + 1]
        t = cand[3 * i + 2]
        if side == 0:
            accepted = color_rank[t, a] < c_match[t]
            if accepted:
                if fp[a] >= 0:
                    c_match[fp[a]] = NO_RANK
                if cp[t] >= 0:
                    f_match[cp[t]] = NO_RANK
                link(fp, cp, a, t)
                f_match[a] = f_offer[a]
                c_match[t] = color_rank[t, a]
            f_offer[a] += 1
        else:
            accepted = food_rank[t, a] < f_match[t]
            if accepted:
                if cp[a] >= 0:
                    f_match[cp[a]] = NO_RANK
                if fp[t] >= 0:
                    c_match[fp[t]] = NO_RANK
                link(fp, cp, t, a)
                c_match[a] = c_offer[a]
                f_match[t] = food_rank[t, a]
            c_offer[a] += 1
        if push(buf, side, a, t, accepted) < 0:
            return -1


cdef inline int _food_target(int f, int nc, const int64_t[:, ::1] food_lists,
                             int32_t* fp, char* fx) noexcept nogil:
    cdef int j, c
    for j in range(nc):
        c = food_lists[f, j]
        if c == fp[f]:
            return -1
        if not fx[f * nc + c]:
            return c
    return -1


cdef inline int _color_target(int c, int nf, const int64_t[:, ::1] color_lists,
                              int32_t* cp, char* cx) noexcept nogil:
    cdef int j, f
    for j in range(nf):
        f = color_lists[c, j]
        if f == cp[c]:
            return -1
        if not cx[c * nf + f]:
            return f
    return -1


cdef bint _lapse(int nf, int nc, int32_t* fp, int32_t* cp, char* fx, char* cx,
                 const int64_t[:, ::1] food_rank, const int64_t[:, ::1] color_rank) noexcept nogil:
    cdef int f, c
    cdef bint dropped = False
    for f in range(nf):
        for c in range(nc):
            if fx[f * nc + c] and (cp[c] < 0 or color_rank[c, cp[c]] > color_rank[c, f]):
                fx[f * nc + c] = 0
                dropped = True
    for c in range(nc):
        for f in range(nf):
            if cx[c * nf + f] and (fp[f] < 0 or food_rank[f, fp[f]] > food_rank[f, c]):
                cx[c * nf + f] = 0
                dropped = True
    return dropped


cdef int _dacc(Rng* rng, int rule, double lam, Py_ssize_t max_steps,
               const int64_t[:, ::1] pay_f, const int64_t[:, ::1] pay_c,
               const int64_t[:, ::1] food_lists, const int64_t[:, ::1] color_lists,
               const int64_t[:, ::1] food_rank, const int64_t[:, ::1] color_rank,
               _Work wk) except -2:
    cdef int nf = pay_f.shape[0]
    cdef int nc = pay_f.shape[1]
    cdef int32_t* fp = wk.fp
    cdef int32_t* cp = wk.cp
    cdef char* fx = wk.fx
    cdef char* cx = wk.cx
    cdef int32_t* origin = wk.ia
    cdef int32_t* grown
    cdef int32_t* cand = wk.cand
    cdef Py_ssize_t depth = 0, k, i
    cdef int side, a, t, s, x, y, f, c, accepted, old_c, old_f
    with nogil:
        for i in range(nf * nc):
            fx[i] = 0
            cx[i] = 0
        for f in range(nf):
            origin[f] = -1
        while True:
            side = -1
            while depth > 0:
                depth -= 1
                s = wk.stack[2 * depth]
                x = wk.stack[2 * depth + 1]
                if s == 0:
                    y = _food_target(x, nc, food_lists, fp, fx)
                else:
                    y = _color_target(x, nf, color_lists, cp, cx)
                if y >= 0:
                    side = s
                    a = x
                    t = y
                    break
            if side < 0:
                k = 0
                for f in range(nf):
                    y = _food_target(f, nc, food_lists, fp, fx)
                    if y >= 0:
                        cand[3 * k] = 0
                        cand[3 * k + 1] = f
                        cand[3 * k + 2] = y
                        wk.gains[k] = pay_f[f, y] - (pay_f[f, fp[f]] if fp[f] >= 0 else 0)
                        k += 1
                for c in range(nc):
                    y = _color_target(c, nf, color_lists, cp, cx)
                    if y >= 0:
                        cand[3 * k] = 1
                        cand[3 * k + 1] = c
                        cand[3 * k + 2] = y
                        wk.gains[k] = pay_c[y, c] - (pay_c[cp[c], c] if cp[c] >= 0 else 0)
                        k += 1
                if k == 0:
                    if _lapse(nf, nc, fp, cp, fx, cx, food_rank, color_rank):
                        continue
                    return 0
                if wk.buf.n >= max_steps:
                    return 1
                i = draw(rng, wk.gains, wk.w, k, rule, lam)
                side = cand[3 * i]
                a = cand[3 * i + 1]
                t = cand[3 * i + 2]
            elif wk.buf.n >= max_steps:
                return 1

            if side == 0:
                f = a
                c = t
                accepted = cp[c] < 0 or color_rank[c, f] < color_rank[c, cp[c]]
            else:
                c = a
                f = t
                accepted = fp[f] < 0 or food_rank[f, c] < food_rank[f, fp[f]]
            if not accepted:
                if side == 0:
                    fx[f * nc + c] = 1
                else:
                    cx[c * nf + f] = 1
                if push(&wk.buf, side, a, t, 0) < 0:
                    return -1
                continue

            old_c = fp[f]
            old_f = cp[c]
            if old_c >= 0:
                cx[old_c * nf + f] = 1
                cp[old_c] = -1
                if origin[f] == 0:
                    if depth == wk.stack_cap:
                        wk.stack_cap = 2 * wk.stack_cap + 16
                        grown = <int32_t*>realloc(wk.stack, 2 * wk.stack_cap * sizeof(int32_t))
                        if grown == NULL:
                            return -1
                        wk.stack = grown
                    wk.stack[2 * depth] = 1
                    wk.stack[2 * depth + 1] = old_c
                    depth += 1
            if old_f >= 0:
                fx[old_f * nc + c] = 1
                fp[old_f] = -1
                if origin[old_f] == 1:
                    if depth == wk.stack_cap:
                        wk.stack_cap = 2 * wk.stack_cap + 16
                        grown = <int32_t*>realloc(wk.stack, 2 * wk.stack_cap * sizeof(int32_t))
                        if grown == NULL:
                            return -1
                        wk.stack = grown
                    wk.stack[2 * depth] = 0
                    wk.stack[2 * depth + 1] = old_f
                    depth += 1
                origin[old_f] = -1
            fp[f] = c
            cp[c] = f
            origin[f] = side
            if push(&wk.buf, side, a, t, 1) < 0:
                return -1


cdef extern from *:
    ctypedef unsigned long long u128 "unsigned __int128"


def cycle_profile(const int64_t[::1] foods, const int64_t[::1] colors):
    """Same contract as the pure-Python version; counts are 128-bit, None on overflow."""
    cdef Py_ssize_t T = foods.shape[0]
    if T < 3:
        return []
    cdef int nf = 0, nc = 0
    cdef Py_ssize_t t, t1, stop, j
    for t in range(T):
        if foods[t] + 1 > nf:
            nf = foods[t] + 1
        if colors[t] + 1 > nc:
            nc = colors[t] + 1
    last_np = np.full(nf * nc, -1, dtype=np.int64)
    cdef int64_t[::1] last = last_np
    for t in range(T):
        last[foods[t] * nc + colors[t]] = t
    bl_np = np.zeros(nf * nc, dtype=np.int64)
    cdef int64_t[::1] bl = bl_np
    cdef u128 *bn = <u128 *> malloc(nf * nc * sizeof(u128))
    if bn == NULL:
        raise MemoryError()
    cdef int f0, c0, f, c, ff, cc
    cdef int64_t m, v, top
    cdef u128 k, total, prev
    cdef bint overflow = False
    out = []
    for t1 in range(T):
        f0 = foods[t1]
        c0 = colors[t1]
        stop = last[f0 * nc + c0]
        if stop <= t1 + 1:
            continue
        with nogil:
            for j in range(nf * nc):
                bl[j] = 0
                bn[j] = 0
            bl[f0 * nc + c0] = 1
            bn[f0 * nc + c0] = 1
            top = 0
            total = 0
            for t in range(t1 + 1, stop + 1):
                f = foods[t]
                c = colors[t]
                m = 0
                k = 0
                for cc in range(nc):
                    if cc != c:
                        v = bl[f * nc + cc]
                        if v > m:
                            m = v
                            k = bn[f * nc + cc]
                        elif v == m and v:
                            prev = k
                            k += bn[f * nc + cc]
                            if k < prev:
                                overflow = True
                for ff in range(nf):
                    if ff != f:
                        v = bl[ff * nc + c]
                        if v > m:
                            m = v
                            k = bn[ff * nc + c]
                        elif v == m and v:
                            prev = k
                            k += bn[ff * nc + c]
                            if k < prev:
                                overflow = True
                if m == 0:
                    continue
                if f == f0 and c == c0:
                    if m + 1 > top:
                        top = m + 1
                        total = k
                    elif m + 1 == top:
                        prev = total
                        total += k
                        if total < prev:
                            overflow = True
                elif m + 1 > bl[f * nc + c]:
                    bl[f * nc + c] = m + 1
                    bn[f * nc + c] = k
                elif m + 1 == bl[f * nc + c]:
                    prev = bn[f * nc + c]
                    bn[f * nc + c] += k
                    if bn[f * nc + c] < prev:
                        overflow = True
        if overflow:
            free(bn)
            return None
        if total:
            out.append((int(top), (int(<uint64_t>(total >> 64)) << 64) | int(<uint64_t>total)))
    free(bn)
    return out
