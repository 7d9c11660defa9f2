"""Random state-space systems for oracle comparisons."""
import numpy as np

from ucimpact.model_spec import StateSpaceSystem


def random_system(rng, m_max=6):
    """Random system whose diffuse block is unit-root and the rest stable.

    Diffuse states are an optional level or local-linear-trend block followed
    by 2x2 rotations; the stationary block has spectral radius in
    [0.2, 0.95]. This keeps the dense oracle well conditioned.
    """
    m = int(rng.integers(1, m_max + 1))
    q_target = int(rng.integers(0, m + 1))
    T = np.zeros((m, m))
    q = 0
    # at most one trend block; rotations at distinct frequencies, so the
    # diffuse elements stay identifiable from the observations
    if q_target and rng.random() < 0.7:
        if q_target >= 2 and rng.random() < 0.5:
            T[:2, :2] = [[1.0, 1.0], [0.0, 1.0]]
            q = 2
        else:
            T[0, 0] = 1.0
            q = 1
    used = []
    while q_target - q >= 2:
        th = rng.uniform(0.3, 2.8)
        if any(abs(th - u) < 0.3 for u in used):
            continue
        used.append(th)
        T[q : q + 2, q : q + 2] = [[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]]
        q += 2
    if m > q:
        S = rng.normal(size=(m - q, m - q))
        S *= rng.uniform(0.2, 0.95) / max(abs(np.linalg.eigvals(S)))
        T[q:, q:] = S
    P_inf = np.diag([1.0] * q + [0.0] * (m - q))
    A = rng.normal(size=(m, m))
    P_star = A @ A.T / m
    P_star[:q, :] = 0.0
    P_star[:, :q] = 0.0
    B = rng.normal(size=(m, m))
    Q = B @ B.T / m
    Z = rng.choice([-1.0, 1.0], size=m) * rng.uniform(0.5, 1.5, size=m)
    return StateSpaceSystem(Z, T, np.eye(m), Q, rng.uniform(0.1, 1.0), rng.normal(size=m), P_star, P_inf)


def random_case(rng, n_max=20, n_missing=0):
    system = random_system(rng)
    n = int(rng.integers(system.m + 4 + n_missing, n_max + 1))
    y = rng.normal(size=n) * 2.0
    if n_missing:
        y[rng.choice(n, size=n_missing, replace=False)] = np.nan
    return system, y


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))
