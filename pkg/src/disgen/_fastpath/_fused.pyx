# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused frozen-model forward for small graphs.

The occlusion explainer and the augmentation verification loop evaluate the
frozen backbone thousands of times on graphs of a few dozen nodes, where
interpreter and array-dispatch overhead dominates; this module runs the whole
forward (adjacency normalization, conv layers, pooling, head, softmax) in C.
Semantics match disgen._fastpath.fallback exactly.
"""

from libc.math cimport sqrt, exp

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _mm(const double[:, ::1] a, const double[:, ::1] b,
              double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double aik
    for i in range(n):
        for j in range(p):
            out[i, j] = 0.0
        for k in range(m):
            aik = a[i, k]
            for j in range(p):
                out[i, j] += aik * b[k, j]


cdef void _relu_inplace(double[:, ::1] h) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(h.shape[0]):
        for j in range(h.shape[1]):
            if h[i, j] < 0.0:
                h[i, j] = 0.0


cdef _pool_head_softmax(double[:, ::1] h, const double[:, ::1] head_w,
                        const double[::1] head_b):
    cdef Py_ssize_t n = h.shape[0], d = h.shape[1], c = head_w.shape[1]
    cdef Py_ssize_t i, j, k
    pooled_arr = np.zeros(d)
    cdef double[::1] pooled = pooled_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                pooled[j] += h[i, j]
        for j in range(d):
            pooled[j] /= n
    logits_arr = np.empty(c)
    cdef double[::1] logits = logits_arr
    cdef double acc, zmax, esum
    with nogil:
        for k in range(c):
            acc = head_b[k]
            for j in range(d):
                acc += pooled[j] * head_w[j, k]
            logits[k] = acc
        zmax = logits[0]
        for k in range(1, c):
            if logits[k] > zmax:
                zmax = logits[k]
        esum = 0.0
        for k in range(c):
            logits[k] = exp(logits[k] - zmax)
            esum += logits[k]
        for k in range(c):
            logits[k] /= esum
    return logits_arr


cdef _build_a_hat(Py_ssize_t n, const long long[:, ::1] edges):
    a_arr = np.eye(n)
    cdef double[:, ::1] a = a_arr
    cdef Py_ssize_t e, u, v, i, j
    cdef double s
    deg_arr = np.empty(n)
    cdef double[::1] dinv = deg_arr
    with nogil:
        for e in range(edges.shape[0]):
            u = edges[e, 0]
            v = edges[e, 1]
            a[u, v] = 1.0
            a[v, u] = 1.0
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += a[i, j]
            dinv[i] = 1.0 / sqrt(s)
        for i in range(n):
            for j in range(n):
                a[i, j] *= dinv[i] * dinv[j]
    return a_arr


def gcn_probs(features, edges, weights, head_w, head_b):
    features = np.ascontiguousarray(features, dtype=np.float64)
    edge_arr = np.ascontiguousarray(
        np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    cdef Py_ssize_t n = features.shape[0]
    a_hat = _build_a_hat(n, edge_arr)
    cdef double[:, ::1] a_view = a_hat

    h = features
    cdef Py_ssize_t last = len(weights) - 1
    cdef Py_ssize_t i
    for i in range(len(weights)):
        w = np.ascontiguousarray(weights[i], dtype=np.float64)
        t = np.empty((n, h.shape[1]))
        _mm(a_view, h, t)
        h2 = np.empty((n, w.shape[1]))
        _mm(t, w, h2)
        if i != last:
            _relu_inplace(h2)
        h = h2
    return _pool_head_softmax(
        h,
        np.ascontiguousarray(head_w, dtype=np.float64),
        np.ascontiguousarray(head_b, dtype=np.float64))


cdef void _gin_agg(const double[:, ::1] h, const long long[:, ::1] edges,
                   double eps, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = h.shape[0], d = h.shape[1]
    cdef Py_ssize_t i, j, e, u, v
    for i in range(n):
        for j in range(d):
            out[i, j] = (1.0 + eps) * h[i, j]
    for e in range(edges.shape[0]):
        u = edges[e, 0]
        v = edges[e, 1]
        for j in range(d):
            out[u, j] += h[v, j]
        for j in range(d):
            out[v, j] += h[u, j]


cdef void _add_bias(double[:, ::1] h, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(h.shape[0]):
        for j in range(h.shape[1]):
            h[i, j] += b[j]


def gin_probs(features, edges, layers, head_w, head_b):
    h = np.ascontiguousarray(features, dtype=np.float64)
    edge_arr = np.ascontiguousarray(
        np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    cdef long long[:, ::1] e_view = edge_arr
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t last = len(layers) - 1
    cdef Py_ssize_t i
    cdef double eps_c
    for i in range(len(layers)):
        eps, w1, b1, w2, b2 = layers[i]
        eps_c = eps
        w1 = np.ascontiguousarray(w1, dtype=np.float64)
        w2 = np.ascontiguousarray(w2, dtype=np.float64)
        b1 = np.ascontiguousarray(b1, dtype=np.float64)
        b2 = np.ascontiguousarray(b2, dtype=np.float64)
        agg = np.empty((n, h.shape[1]))
        _gin_agg(h, e_view, eps_c, agg)
        z1 = np.empty((n, w1.shape[1]))
        _mm(agg, w1, z1)
        _add_bias(z1, b1)
        _relu_inplace(z1)
        z2 = np.empty((n, w2.shape[1]))
        _mm(z1, w2, z2)
        _add_bias(z2, b2)
        if i != last:
            _relu_inplace(z2)
        h = z2
    return _pool_head_softmax(
        h,
        np.ascontiguousarray(head_w, dtype=np.float64),
        np.ascontiguousarray(head_b, dtype=np.float64))
