# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence kernel. Same contract as ``_gru_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


cdef inline double _sigmoid(double x) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


def gru_forward(double[:, :, ::1] xz, double[:, :, ::1] xr, double[:, :, ::1] xc,
                double[:, ::1] vz, double[:, ::1] vr, double[:, ::1] vc,
                double[:, ::1] mask, bint reverse):
    cdef Py_ssize_t B = xz.shape[0], n = xz.shape[1], H = xz.shape[2]
    states_a = np.zeros((B, n, H))
    hprev_a = np.zeros((B, n, H))
    z_a = np.zeros((B, n, H))
    r_a = np.zeros((B, n, H))
    c_a = np.zeros((B, n, H))
    cdef double[:, :, ::1] states = states_a, hprev = hprev_a
    cdef double[:, :, ::1] z = z_a, r = r_a, c = c_a
    cdef double[::1] h = np.zeros(H), rh = np.zeros(H)
    cdef double[::1] az = np.zeros(H), ar = np.zeros(H), ac = np.zeros(H)
    cdef Py_ssize_t b, s, t, i, j
    cdef double hi, rhi, zj, hn

    with nogil:
        for b in range(B):
            for j in range(H):
                h[j] = 0.0
            for s in range(n):
                t = n - 1 - s if reverse else s
                for j in range(H):
                    hprev[b, t, j] = h[j]
                if mask[b, t] <= 0.0:
                    for j in range(H):
                        states[b, t, j] = h[j]
                    continue
                for j in range(H):
                    az[j] = xz[b, t, j]
                    ar[j] = xr[b, t, j]
                for i in range(H):
                    hi = h[i]
                    if hi != 0.0:
                        for j in range(H):
                            az[j] += hi * vz[i, j]
                            ar[j] += hi * vr[i, j]
                for j in range(H):
                    z[b, t, j] = _sigmoid(az[j])
                    r[b, t, j] = _sigmoid(ar[j])
                    rh[j] = r[b, t, j] * h[j]
                    ac[j] = xc[b, t, j]
                for i in range(H):
                    rhi = rh[i]
                    if rhi != 0.0:
                        for j in range(H):
                            ac[j] += rhi * vc[i, j]
                for j in range(H):
                    c[b, t, j] = tanh(ac[j])
                    zj = z[b, t, j]
                    hn = zj * c[b, t, j] + (1.0 - zj) * h[j]
                    h[j] = hn
                    states[b, t, j] = hn
    return states_a, hprev_a, z_a, r_a, c_a


def gru_backward(double[:, :, ::1] dstates, double[:, :, ::1] hprev,
                 double[:, :, ::1] z, double[:, :, ::1] r, double[:, :, ::1] c,
                 double[:, ::1] vz, double[:, ::1] vr, double[:, ::1] vc,
                 double[:, ::1] mask, bint reverse):
    cdef Py_ssize_t B = dstates.shape[0], n = dstates.shape[1], H = dstates.shape[2]
    dxz_a = np.zeros((B, n, H))
    dxr_a = np.zeros((B, n, H))
    dxc_a = np.zeros((B, n, H))
    cdef double[:, :, ::1] dxz = dxz_a, dxr = dxr_a, dxc = dxc_a
    cdef double[::1] dh = np.zeros(H), dhp = np.zeros(H), drh = np.zeros(H)
    cdef Py_ssize_t b, s, t, i, j
    cdef double hp, zj, rj, cj, acc, dz, dr, daz_j, dar_j

    with nogil:
        for b in range(B):
            for j in range(H):
                dh[j] = 0.0
            for s in range(n):
                # walk the processing order backwards
                t = s if reverse else n - 1 - s
                for j in range(H):
                    dh[j] += dstates[b, t, j]
                if mask[b, t] <= 0.0:
                    continue
                for j in range(H):
                    hp = hprev[b, t, j]
                    zj = z[b, t, j]
                    cj = c[b, t, j]
                    dxc[b, t, j] = dh[j] * zj * (1.0 - cj * cj)
                    dz = dh[j] * (cj - hp)
                    dxz[b, t, j] = dz * zj * (1.0 - zj)
                    dhp[j] = dh[j] * (1.0 - zj)
                for i in range(H):
                    acc = 0.0
                    for j in range(H):
                        acc += vc[i, j] * dxc[b, t, j]
                    drh[i] = acc
                for i in range(H):
                    rj = r[b, t, i]
                    hp = hprev[b, t, i]
                    dr = drh[i] * hp
                    dxr[b, t, i] = dr * rj * (1.0 - rj)
                    dhp[i] += drh[i] * rj
                for i in range(H):
                    acc = 0.0
                    for j in range(H):
                        daz_j = dxz[b, t, j]
                        dar_j = dxr[b, t, j]
                        acc += vz[i, j] * daz_j + vr[i, j] * dar_j
                    dhp[i] += acc
                for j in range(H):
                    dh[j] = dhp[j]
    # weight gradients as single GEMMs over all (example, step) rows
    h_rows = np.asarray(hprev).reshape(-1, H)
    rh_rows = (np.asarray(r) * np.asarray(hprev)).reshape(-1, H)
    dvz_a = h_rows.T @ dxz_a.reshape(-1, H)
    dvr_a = h_rows.T @ dxr_a.reshape(-1, H)
    dvc_a = rh_rows.T @ dxc_a.reshape(-1, H)
    return dxz_a, dxr_a, dxc_a, dvz_a, dvr_a, dvc_a
