"""Pure-Python kernels. Reference semantics for the compiled core."""


def advance_patient(health, co2, pulse, flow, steps, d_noflow, d_cpr, r_rosc,
                    co2_rate, flow_target, noflow_target):
    """Apply ``steps`` one-second patient updates with fixed flow and pulse.

    Returns (health, co2, zero_at) where zero_at is the 1-based step at which
    health first sat at 0, or 0 if it never did.
    """
    zero_at = 0
    target = flow_target if (flow or pulse) else noflow_target
    for i in range(1, steps + 1):
        if pulse:
            health = health + r_rosc
            if health > 1.0:
                health = 1.0
        else:
            health = health - (d_cpr if flow else d_noflow)
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


def mw_null_counts(n, m):
    """Number of rank labelings giving each U = 0..n*m under no ties."""
    # counts[j][u] for the current i, built up one sample-a element at a time.
    prev = [[1] + [0] * (n * m) for _ in range(m + 1)]
    for i in range(1, n + 1):
        cur = [[0] * (n * m + 1) for _ in range(m + 1)]
        cur[0][0] = 1
        for j in range(1, m + 1):
            row, left, up = cur[j], cur[j - 1], prev[j]
            for u in range(i * j + 1):
                v = left[u]
                if u >= j:
                    v += up[u - j]
                row[u] = v
        prev = cur
    return prev[m]
