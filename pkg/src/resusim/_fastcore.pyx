# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must stay bit-for-bit equal to resusim._purecore."""

from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, calloc, free


def advance_patient(double health, double co2, bint pulse, bint flow, long steps,
                    double d_noflow, double d_cpr, double r_rosc,
                    double co2_rate, double flow_target, double noflow_target):
    cdef long i, zero_at = 0
    cdef double diff
    cdef double target = flow_target if (flow or pulse) else noflow_target
    cdef double drop = d_cpr if flow else d_noflow
    for i in range(1, steps + 1):
        if pulse:
            health = health + r_rosc
            if health > 1.0:
                health = 1.0
        else:
            health = health - drop
            if health < 0.0:
                health = 0.0
        diff = target - co2
        if diff > co2_rate:
            co2 = co2 + co2_rate
        elif diff < -co2_rate:
            co2 = co2 - co2_rate
        else:
            co2 = target
        if co2 < 0.0:
            co2 = 0.0
        elif co2 > 100.0:
            co2 = 100.0
        if zero_at == 0 and health == 0.0:
            zero_at = i
    return health, co2, zero_at


def mw_null_counts(int n, int m):
    if n + m > 60:
        from resusim._purecore import mw_null_counts as slow
        return slow(n, m)
    cdef int width = n * m + 1
    cdef int i, j, u
    cdef uint64_t *prev = <uint64_t *> calloc((m + 1) * width, sizeof(uint64_t))
    cdef uint64_t *cur = <uint64_t *> calloc((m + 1) * width, sizeof(uint64_t))
    cdef uint64_t *tmp
    if prev == NULL or cur == NULL:
        free(prev)
        free(cur)
        raise MemoryError()
    try:
        for j in range(m + 1):
            prev[j * width] = 1
        for i in range(1, n + 1):
            for j in range(m + 1):
                for u in range(width):
                    cur[j * width + u] = 0
            cur[0] = 1
            for j in range(1, m + 1):
                for u in range(i * j + 1):
                    cur[j * width + u] = cur[(j - 1) * width + u]
                    if u >= j:
                        cur[j * width + u] += prev[j * width + u - j]
            tmp = prev
            prev = cur
            cur = tmp
        return [int(prev[m * width + u]) for u in range(width)]
    finally:
        free(prev)
        free(cur)
