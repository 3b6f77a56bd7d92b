# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched GVA Newton ascent.

Same algorithm as ``_gva_py.newton_batch``; one subject at a time with the
GIL released, BLAS ``dgemm``/``dgemv`` for the weighted Gram matrix and matvecs and a Cholesky
solve for the Newton direction in m.
"""
import numpy as np

from libc.math cimport exp, fabs, isfinite, sqrt, NAN
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm, dgemv
from scipy.linalg.cython_lapack cimport dpotrf, dpotrs

cdef double ARMIJO = 1e-4
cdef int MAX_HALVINGS = 40
cdef double RHO_STEP_CAP = 2.0


cdef double _evaluate(int p, int q, const double* V, const double* W2, const double* Linv,
                      const double* Ld, const double* x, const double* off, double* m,
                      const double* rho, double bound, double clip, double* Vm, double* s,
                      double* eta, double* A, double* half, int* projected) noexcept nogil:
    cdef int j, k, l, inc = 1
    cdef double acc, mx = 0.0, scale, e, f = 0.0, sx = 0.0, sa = 0.0, one = 1.0, zero = 0.0, hf = 0.5
    cdef char tt = b'T'
    # Vm = V m and half = (V*V) s / 2; V row-major p x q is column-major q x p
    dgemv(&tt, &q, &p, &one, <double*> V, &q, m, &inc, &zero, Vm, &inc)
    for j in range(p):
        if fabs(Vm[j]) > mx:
            mx = fabs(Vm[j])
    projected[0] = 0
    if mx > bound:
        projected[0] = 1
        scale = bound / mx
        for k in range(q):
            m[k] = m[k] * scale
        dgemv(&tt, &q, &p, &one, <double*> V, &q, m, &inc, &zero, Vm, &inc)
    for k in range(q):
        s[k] = exp(rho[k])
    dgemv(&tt, &q, &p, &hf, <double*> W2, &q, s, &inc, &zero, half, &inc)
    for j in range(p):
        e = off[j] + Vm[j] + half[j]
        eta[j] = e
        A[j] = exp(e if e < clip else clip)
        sx = sx + x[j] * Vm[j]
        sa = sa + A[j]
    f = sx - sa
    for k in range(q):
        acc = 0.0
        for l in range(q):
            acc = acc + Linv[k * q + l] * m[l]
        f = f - 0.5 * m[k] * acc - 0.5 * Ld[k] * s[k] + 0.5 * rho[k]
    return f


cdef void _weighted_gram(int p, int q, const double* V, const double* dA, double* Sc,
                         double* H, double beta) noexcept nogil:
    """H (column-major) = beta * H + V' diag(dA) V; the upper triangle is authoritative."""
    cdef int j, k
    cdef double w, one = 1.0
    cdef char tn = b'N'
    cdef char tt = b'T'
    for j in range(p):
        w = dA[j]
        for k in range(q):
            Sc[j * q + k] = w * V[j * q + k]
    dgemm(&tn, &tt, &q, &q, &p, &one, Sc, &q, <double*> V, &q, &beta, H, &q)


def _writable(a):
    # BLAS takes non-const pointers, so read-only inputs are copied
    a = np.ascontiguousarray(a, dtype=np.float64)
    return a if a.flags.writeable else a.copy()


def newton_batch(V, X, offset, Linv, m, rho, double bound, double eta_clip, int max_iters,
                 double tol, double step_init=1.0, double backtrack=0.5, bint want_gram=False):
    cdef double[:, ::1] Vv = _writable(V)
    cdef double[:, ::1] Xv = _writable(X)
    cdef double[:, ::1] Ov = _writable(offset)
    cdef double[:, ::1] Lv = _writable(Linv)
    m_out = np.array(m, dtype=np.float64, order="C", copy=True)
    rho_out = np.array(rho, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] Mv = m_out
    cdef double[:, ::1] Rv = rho_out
    cdef int n = Xv.shape[0], p = Vv.shape[0], q = Vv.shape[1]
    W2_arr = np.ascontiguousarray(np.asarray(V, dtype=np.float64) ** 2)
    cdef double[:, ::1] W2 = W2_arr
    cdef double[:, ::1] W4 = np.ascontiguousarray(W2_arr ** 2)
    cdef double[::1] Ld = _writable(np.diag(np.asarray(Linv, dtype=np.float64)))
    f_out = np.empty(n)
    iters_out = np.zeros(n, dtype=np.int32)
    conv_out = np.zeros(n, dtype=np.uint8)
    clamps_out = np.zeros(n, dtype=np.int32)
    if want_gram:
        gram_out = np.zeros((n, q, q))
    else:
        gram_out = np.zeros((1, 1, 1))
    cdef double[::1] Fv = f_out
    cdef int[::1] Iv = iters_out
    cdef unsigned char[::1] Cv = conv_out
    cdef int[::1] Kv = clamps_out
    cdef double[:, :, ::1] Gv = gram_out
    cdef int do_gram = want_gram

    cdef double* buf = <double*> malloc(sizeof(double) * (9 * p + p * q + q * q + 9 * q))
    if buf == NULL:
        raise MemoryError()
    cdef double* Vm = buf
    cdef double* eta = Vm + p
    cdef double* A = eta + p
    cdef double* Vm2 = A + p
    cdef double* eta2 = Vm2 + p
    cdef double* A2 = eta2 + p
    cdef double* dA = A2 + p
    cdef double* resid = dA + p
    cdef double* half = resid + p
    cdef double* Sc = half + p
    cdef double* H = Sc + p * q
    cdef double* gm = H + q * q
    cdef double* gr = gm + q
    cdef double* dm = gr + q
    cdef double* dr = dm + q
    cdef double* mc = dr + q
    cdef double* rc = mc + q
    cdef double* s = rc + q
    cdef double* sc = s + q
    cdef double* hh = sc + q
    cdef double* tmp

    cdef int i, j, k, l, it, ls, info, proj, accepted, one = 1, clamps
    cdef double f, fc, acc, dec, t, target, c
    cdef char uplo = b'U'
    cdef char tn = b'N'
    cdef double one_d = 1.0, zero_d = 0.0

    with nogil:
        for i in range(n):
            Fv[i] = _evaluate(p, q, &Vv[0, 0], &W2[0, 0], &Lv[0, 0], &Ld[0], &Xv[i, 0], &Ov[i, 0],
                              &Mv[i, 0], &Rv[i, 0], bound, eta_clip, Vm, s, eta, A, half, &proj)
            f = Fv[i]
            if not isfinite(f):
                Fv[i] = NAN
                continue
            for it in range(max_iters):
                for j in range(p):
                    dA[j] = 0.0 if eta[j] > eta_clip else A[j]
                    resid[j] = Xv[i, j] - dA[j]
                dgemv(&tn, &q, &p, &one_d, &Vv[0, 0], &q, resid, &one, &zero_d, gm, &one)
                dgemv(&tn, &q, &p, &one_d, &W2[0, 0], &q, dA, &one, &zero_d, sc, &one)
                dgemv(&tn, &q, &p, &one_d, &W4[0, 0], &q, dA, &one, &zero_d, hh, &one)
                for k in range(q):
                    acc = 0.0
                    for l in range(q):
                        acc = acc + Lv[k, l] * Mv[i, l]
                    gm[k] = gm[k] - acc
                for k in range(q):
                    s[k] = exp(Rv[i, k])
                    c = sc[k] + Ld[k]
                    gr[k] = 0.5 - 0.5 * s[k] * c
                    hh[k] = 0.5 * s[k] * c + 0.25 * s[k] * s[k] * hh[k]
                    dr[k] = gr[k] / hh[k]
                    if dr[k] > RHO_STEP_CAP:
                        dr[k] = RHO_STEP_CAP
                    elif dr[k] < -RHO_STEP_CAP:
                        dr[k] = -RHO_STEP_CAP
                memcpy(H, &Lv[0, 0], sizeof(double) * q * q)
                _weighted_gram(p, q, &Vv[0, 0], dA, Sc, H, 1.0)
                dpotrf(&uplo, &q, H, &q, &info)
                if info != 0:
                    Cv[i] = 1
                    break
                memcpy(dm, gm, sizeof(double) * q)
                dpotrs(&uplo, &q, &one, H, &q, dm, &q, &info)
                dec = 0.0
                for k in range(q):
                    dec = dec + gm[k] * dm[k] + gr[k] * dr[k]
                if dec <= 2.0 * tol * (1.0 + fabs(f)):
                    Cv[i] = 1
                    break
                t = step_init
                accepted = 0
                for ls in range(MAX_HALVINGS):
                    for k in range(q):
                        mc[k] = Mv[i, k] + t * dm[k]
                        rc[k] = Rv[i, k] + t * dr[k]
                    fc = _evaluate(p, q, &Vv[0, 0], &W2[0, 0], &Lv[0, 0], &Ld[0], &Xv[i, 0], &Ov[i, 0],
                                   mc, rc, bound, eta_clip, Vm2, s, eta2, A2, half, &proj)
                    target = f if proj else f + ARMIJO * t * dec
                    if isfinite(fc) and fc >= target:
                        accepted = 1
                        break
                    t = t * backtrack
                if not accepted:
                    Cv[i] = 1
                    break
                for k in range(q):
                    Mv[i, k] = mc[k]
                    Rv[i, k] = rc[k]
                tmp = Vm; Vm = Vm2; Vm2 = tmp
                tmp = eta; eta = eta2; eta2 = tmp
                tmp = A; A = A2; A2 = tmp
                Iv[i] += 1
                if fc - f <= tol * (1.0 + fabs(f)):
                    f = fc
                    Cv[i] = 1
                    break
                f = fc
            Fv[i] = f
            clamps = 0
            for j in range(p):
                if eta[j] > eta_clip:
                    clamps += 1
            Kv[i] = clamps
            if do_gram:
                for j in range(p):
                    dA[j] = 0.0 if eta[j] > eta_clip else A[j]
                _weighted_gram(p, q, &Vv[0, 0], dA, Sc, H, 0.0)
                for k in range(q):
                    for l in range(k, q):
                        Gv[i, k, l] = H[k + l * q]
                        Gv[i, l, k] = H[k + l * q]
    free(buf)
    return {
        "m": m_out,
        "rho": rho_out,
        "f": f_out,
        "iters": iters_out,
        "converged": conv_out.astype(bool),
        "clamps": clamps_out,
        "gram": gram_out if want_gram else None,
    }
