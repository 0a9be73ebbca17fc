# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-block signal kernel; same contract as ``_kernels_py.block_terms``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef double complex cplx


def block_terms(au, dau, ph1, ph2, g, h, double rate, x1, dx1, z, zd, zb,
                dtau1, daod_bs, daoa_ris, dtau2, daod_ris, daoa_ue, derivs=True):
    cdef cplx[:, ::1] AU = np.ascontiguousarray(au, dtype=np.complex128)
    cdef cplx[:, ::1] DAU = np.ascontiguousarray(dau, dtype=np.complex128)
    cdef cplx[::1] PH1 = np.ascontiguousarray(ph1, dtype=np.complex128)
    cdef cplx[::1] PH2 = np.ascontiguousarray(ph2, dtype=np.complex128)
    cdef cplx[::1] G = np.ascontiguousarray(g, dtype=np.complex128)
    cdef cplx[::1] H = np.ascontiguousarray(h, dtype=np.complex128)
    cdef cplx[:, ::1] X1 = np.ascontiguousarray(x1, dtype=np.complex128)
    cdef cplx[:, ::1] DX1 = np.ascontiguousarray(dx1, dtype=np.complex128)
    cdef cplx[:, :, ::1] Z = np.ascontiguousarray(z, dtype=np.complex128)
    cdef cplx[:, :, ::1] ZD = np.ascontiguousarray(zd, dtype=np.complex128)
    cdef cplx[:, :, ::1] ZB = np.ascontiguousarray(zb, dtype=np.complex128)

    cdef Py_ssize_t nu = AU.shape[0], p2 = AU.shape[1], p1 = X1.shape[0]
    cdef Py_ssize_t m_count = X1.shape[1], nb = Z.shape[0]
    cdef Py_ssize_t b, m, r, p, q, l, k, kk

    gamma_a = np.empty((nb, m_count, nu, p2), dtype=np.complex128)
    lam_a = np.empty((nb, m_count, nu, p1), dtype=np.complex128)
    cdef cplx[:, :, :, ::1] GAM = gamma_a
    cdef cplx[:, :, :, ::1] LAM = lam_a

    gx_a = np.empty((p1, m_count), dtype=np.complex128)
    cdef cplx[:, ::1] GX = gx_a
    cdef cplx[::1] GP = np.empty(p1, dtype=np.complex128)
    cdef cplx[::1] HP = np.empty(p2, dtype=np.complex128)
    for l in range(p1):
        GP[l] = G[l] * PH1[l]
        for m in range(m_count):
            GX[l, m] = GP[l] * X1[l, m]
    for q in range(p2):
        HP[q] = H[q] * PH2[q]

    v_a = np.zeros((nb, p2, m_count), dtype=np.complex128)
    c_a = np.zeros((nb, nu, p1), dtype=np.complex128)
    cdef cplx[:, :, ::1] V = v_a
    cdef cplx[:, :, ::1] C = c_a
    cdef cplx acc
    for b in range(nb):
        for p in range(p2):
            for m in range(m_count):
                acc = 0
                for l in range(p1):
                    acc = acc + Z[b, p, l] * GX[l, m]
                V[b, p, m] = acc
        for r in range(nu):
            for l in range(p1):
                acc = 0
                for q in range(p2):
                    acc = acc + AU[r, q] * HP[q] * Z[b, q, l]
                C[b, r, l] = acc
        for m in range(m_count):
            for r in range(nu):
                for p in range(p2):
                    GAM[b, m, r, p] = AU[r, p] * PH2[p] * V[b, p, m]
                for l in range(p1):
                    LAM[b, m, r, l] = C[b, r, l] * PH1[l] * X1[l, m]
    if not derivs:
        return gamma_a, lam_a, None, None

    cdef double[:, ::1] DT1 = np.ascontiguousarray(dtau1, dtype=np.float64)
    cdef double[:, ::1] DBS = np.ascontiguousarray(daod_bs, dtype=np.float64)
    cdef double[:, ::1] DRR = np.ascontiguousarray(daoa_ris, dtype=np.float64)
    cdef double[:, ::1] DT2 = np.ascontiguousarray(dtau2, dtype=np.float64)
    cdef double[:, ::1] DRT = np.ascontiguousarray(daod_ris, dtype=np.float64)
    cdef double[:, ::1] DUE = np.ascontiguousarray(daoa_ue, dtype=np.float64)
    cdef Py_ssize_t nk = DT1.shape[1]
    cdef cplx jr = -1j * rate

    xi_a = np.zeros((nb, m_count, nu, p2, nk), dtype=np.complex128)
    psi_a = np.zeros((nb, m_count, nu, p1, nk), dtype=np.complex128)
    cdef cplx[:, :, :, :, ::1] XI = xi_a
    cdef cplx[:, :, :, :, ::1] PSI = psi_a

    # scratch: vb (p2, m), y (p2, m, k), cd (nu, p1), dc (nu, p1, k)
    cdef cplx[:, ::1] VB = np.empty((p2, m_count), dtype=np.complex128)
    cdef cplx[:, :, ::1] Y = np.empty((p2, m_count, nk), dtype=np.complex128)
    cdef cplx[:, ::1] CD = np.empty((nu, p1), dtype=np.complex128)
    cdef cplx[:, :, ::1] DC = np.empty((nu, p1, nk), dtype=np.complex128)
    cdef cplx t0, t1, t2, a, s0, s1, s2, base

    for b in range(nb):
        for p in range(p2):
            for m in range(m_count):
                acc = 0
                for l in range(p1):
                    acc = acc + ZB[b, p, l] * GX[l, m]
                VB[p, m] = acc
                for k in range(nk):
                    Y[p, m, k] = 0
                for l in range(p1):
                    t0 = Z[b, p, l] * GP[l] * jr * X1[l, m]
                    t1 = ZD[b, p, l] * GP[l] * X1[l, m]
                    t2 = Z[b, p, l] * GP[l] * DX1[l, m]
                    for k in range(nk):
                        Y[p, m, k] = Y[p, m, k] + t0 * DT1[l, k] + t1 * DRR[l, k] + t2 * DBS[l, k]
        for m in range(m_count):
            for r in range(nu):
                for p in range(p2):
                    t0 = jr * GAM[b, m, r, p]
                    t1 = DAU[r, p] * PH2[p] * V[b, p, m]
                    t2 = AU[r, p] * PH2[p] * VB[p, m]
                    a = AU[r, p] * PH2[p]
                    for k in range(nk):
                        XI[b, m, r, p, k] = (t0 * DT2[p, k] + t1 * DUE[p, k] + t2 * DRT[p, k]
                                             + a * Y[p, m, k])

        for r in range(nu):
            for l in range(p1):
                acc = 0
                for k in range(nk):
                    DC[r, l, k] = 0
                for q in range(p2):
                    acc = acc + AU[r, q] * HP[q] * ZD[b, q, l]
                    s0 = AU[r, q] * HP[q] * jr * Z[b, q, l]
                    s1 = DAU[r, q] * HP[q] * Z[b, q, l]
                    s2 = AU[r, q] * HP[q] * ZB[b, q, l]
                    for k in range(nk):
                        DC[r, l, k] = DC[r, l, k] + s0 * DT2[q, k] + s1 * DUE[q, k] + s2 * DRT[q, k]
                CD[r, l] = acc
        for m in range(m_count):
            for r in range(nu):
                for l in range(p1):
                    t0 = jr * LAM[b, m, r, l]
                    t1 = CD[r, l] * PH1[l] * X1[l, m]
                    t2 = C[b, r, l] * PH1[l] * DX1[l, m]
                    base = PH1[l] * X1[l, m]
                    for k in range(nk):
                        PSI[b, m, r, l, k] = (t0 * DT1[l, k] + t1 * DRR[l, k] + t2 * DBS[l, k]
                                              + DC[r, l, k] * base)
    return gamma_a, lam_a, xi_a, psi_a
