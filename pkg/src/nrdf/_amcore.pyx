# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the alternating-minimization solves.

Same call surface as nrdf._ampure; see that module for argument docs.
"""

from libc.math cimport log, INFINITY

import numpy as np

NAME = "compiled"


cdef double _branch(const double* p, const double* A, const double* rho,
                    double corr, int nx, int ny,
                    double s, double eps, long max_iter,
                    double* q, double* den, double* c,
                    double* out_dist, long* out_iters, double* out_gap,
                    double* tr_obj, double* tr_tu, double* tr_tl,
                    double* tr_dist, bint record) nogil:
    cdef long it = 0
    cdef int x, y
    cdef double gap = INFINITY, vb, tu, tl, w, cy, lc, dist, dk, qs
    while True:
        vb = 0.0
        for x in range(nx):
            w = 0.0
            for y in range(ny):
                w += A[x * ny + y] * q[y]
            den[x] = w
            vb -= p[x] * log(w)
        for y in range(ny):
            c[y] = 0.0
        for x in range(nx):
            w = p[x] / den[x]
            for y in range(ny):
                c[y] += w * A[x * ny + y]
        tu = 0.0
        tl = -INFINITY
        for y in range(ny):
            cy = c[y]
            if cy > 0.0:
                lc = log(cy)
                tu += q[y] * cy * lc
                if lc > tl:
                    tl = lc
        gap = tl - tu
        if gap < 0.0:
            gap = 0.0
        if record:
            dk = 0.0
            for x in range(nx):
                w = p[x] / den[x]
                for y in range(ny):
                    dk += w * q[y] * A[x * ny + y] * rho[x * ny + y]
            tr_obj[it] = vb - corr
            tr_tu[it] = tu
            tr_tl[it] = tl
            tr_dist[it] = dk
        it += 1
        if gap <= eps or it >= max_iter:
            break
        qs = 0.0
        for y in range(ny):
            q[y] = q[y] * c[y]
            qs += q[y]
        for y in range(ny):
            q[y] = q[y] / qs
    dist = 0.0
    vb = 0.0
    for x in range(nx):
        w = 0.0
        for y in range(ny):
            w += A[x * ny + y] * q[y]
        den[x] = w
        vb -= p[x] * log(w)
        w = p[x] / w
        for y in range(ny):
            dist += w * q[y] * A[x * ny + y] * rho[x * ny + y]
    out_dist[0] = dist
    out_iters[0] = it
    out_gap[0] = gap
    return s * dist + vb - corr


def solve_cell(const double[::1] p, const double[:, ::1] A, const double[:, ::1] rho,
               double corr, double s, double eps, long max_iter, const double[::1] q0,
               bint record_trace=False):
    cdef int nx = A.shape[0]
    cdef int ny = A.shape[1]
    q_arr = np.array(q0, dtype=np.float64)
    den_arr = np.empty(nx, dtype=np.float64)
    c_arr = np.empty(ny, dtype=np.float64)
    cdef double[::1] q = q_arr
    cdef double[::1] den = den_arr
    cdef double[::1] c = c_arr
    cdef double rate, dist = 0.0, gap = 0.0
    cdef long iters = 0
    cdef double[::1] t_obj, t_tu, t_tl, t_dist
    if record_trace:
        obj_arr = np.empty(max_iter, dtype=np.float64)
        tu_arr = np.empty(max_iter, dtype=np.float64)
        tl_arr = np.empty(max_iter, dtype=np.float64)
        dist_arr = np.empty(max_iter, dtype=np.float64)
        t_obj = obj_arr
        t_tu = tu_arr
        t_tl = tl_arr
        t_dist = dist_arr
        with nogil:
            rate = _branch(&p[0], &A[0, 0], &rho[0, 0], corr, nx, ny, s, eps,
                           max_iter, &q[0], &den[0], &c[0], &dist, &iters, &gap,
                           &t_obj[0], &t_tu[0], &t_tl[0], &t_dist[0], True)
        trace = (obj_arr[:iters].copy(), tu_arr[:iters].copy(),
                 tl_arr[:iters].copy(), dist_arr[:iters].copy())
    else:
        with nogil:
            rate = _branch(&p[0], &A[0, 0], &rho[0, 0], corr, nx, ny, s, eps,
                           max_iter, &q[0], &den[0], &c[0], &dist, &iters, &gap,
                           NULL, NULL, NULL, NULL, False)
        trace = None
    phi = (q_arr[None, :] * np.asarray(A)) / (np.asarray(A) @ q_arr)[:, None]
    return rate, dist, iters, gap, q_arr, phi, trace


def solve_block(const double[:, ::1] preds, const double[:, :, ::1] A_stack,
                const double[:, ::1] mshift, const double[:, ::1] rho,
                double s, double eps, long max_iter,
                double[:, ::1] out_rate, double[:, ::1] out_dist,
                long[:, ::1] out_iters, double[:, ::1] out_gap):
    cdef int n_next = A_stack.shape[0]
    cdef int nx = A_stack.shape[1]
    cdef int ny = A_stack.shape[2]
    cdef int n_branches = preds.shape[0]
    q_arr = np.empty(ny, dtype=np.float64)
    den_arr = np.empty(nx, dtype=np.float64)
    c_arr = np.empty(ny, dtype=np.float64)
    cdef double[::1] q = q_arr
    cdef double[::1] den = den_arr
    cdef double[::1] c = c_arr
    cdef int j, yb, x, y
    cdef double corr, dist, gap
    cdef long iters
    with nogil:
        for j in range(n_next):
            for yb in range(n_branches):
                for y in range(ny):
                    q[y] = 1.0 / ny
                corr = 0.0
                for x in range(nx):
                    corr += preds[yb, x] * mshift[j, x]
                out_rate[j, yb] = _branch(
                    &preds[yb, 0], &A_stack[j, 0, 0], &rho[0, 0], corr, nx, ny,
                    s, eps, max_iter, &q[0], &den[0], &c[0],
                    &dist, &iters, &gap, NULL, NULL, NULL, NULL, False)
                out_dist[j, yb] = dist
                out_iters[j, yb] = iters
                out_gap[j, yb] = gap


def solve_span(const double[:, :, ::1] preds, const double[:, :, ::1] A_stack,
               const double[:, ::1] mshift, const double[:, ::1] rho,
               double s, double eps, long max_iter,
               double[:, :, ::1] out_rate, double[:, :, ::1] out_dist,
               long[:, :, ::1] out_iters, double[:, :, ::1] out_gap):
    """Sweep a contiguous range of current grid points in one nogil region.

    preds is (span, n_branches, nx); outputs are (span, n_next, n_branches)
    slices of the stage tables, written in place.
    """
    cdef int span = preds.shape[0]
    cdef int n_branches = preds.shape[1]
    cdef int n_next = A_stack.shape[0]
    cdef int nx = A_stack.shape[1]
    cdef int ny = A_stack.shape[2]
    q_arr = np.empty(ny, dtype=np.float64)
    den_arr = np.empty(nx, dtype=np.float64)
    c_arr = np.empty(ny, dtype=np.float64)
    cdef double[::1] q = q_arr
    cdef double[::1] den = den_arr
    cdef double[::1] c = c_arr
    cdef int b, j, yb, x, y
    cdef double corr, dist, gap
    cdef long iters
    with nogil:
        for b in range(span):
            for j in range(n_next):
                for yb in range(n_branches):
                    for y in range(ny):
                        q[y] = 1.0 / ny
                    corr = 0.0
                    for x in range(nx):
                        corr += preds[b, yb, x] * mshift[j, x]
                    out_rate[b, j, yb] = _branch(
                        &preds[b, yb, 0], &A_stack[j, 0, 0], &rho[0, 0], corr,
                        nx, ny, s, eps, max_iter, &q[0], &den[0], &c[0],
                        &dist, &iters, &gap, NULL, NULL, NULL, NULL, False)
                    out_dist[b, j, yb] = dist
                    out_iters[b, j, yb] = iters
                    out_gap[b, j, yb] = gap
