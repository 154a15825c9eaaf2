"""Independent reference solutions used by the tests.

The finite-difference oracle shares no code with the package: it solves
u_t = u_xx / 2 on a uniform grid with Crank-Nicolson (two backward Euler
start-up steps to damp incompatible initial data).
"""

import numpy as np
from scipy.linalg import solve_banded

# p_t(x, y) to 20 digits from mpmath image sums / eigen sums at 30 digits
KERNEL_VALUES = [
    ("C1", 0.1, 0.3, 0.5, 0.98051712247891422517),
    ("C2", 0.05, 0.1, 0.9, 0.0031274170741603619154),
    ("C3", 0.2, 0.7, 0.2, 0.39983887853285196159),
    ("C4", 0.01, 0.45, 0.5, 3.5206532676429949458),
    ("C1", 1.0, 0.5, 0.5, 0.014383766711652731319),
]

# int_0^0.1 p_u(0.2, 0.6) du for C2 and int_0^0.1 u p_u(0.25, 0.5) du for C1, mpmath quad
INTEGRATED_C2 = 0.032176618333483441136
WEIGHTED_C1 = 0.0043884494906826010083


def crank_nicolson(n, dt, n_steps, y0, dirichlet=(True, True), mu0=None, mu1=None, startup=2):
    """u_t = u_xx / 2 on [0, 1] with n nodes.

    Dirichlet ends take u = mu; Neumann ends impose u_x = mu through a ghost
    node.  mu0, mu1 are callables of t (default zero).  Returns (n_steps + 1, n).
    """
    h = 1.0 / (n - 1)
    mu0 = mu0 or (lambda t: 0.0)
    mu1 = mu1 or (lambda t: 0.0)
    r = 0.5 / (h * h)

    def operator():
        # L u = u_xx / 2 with ghost-node closure; returns the banded matrix and a forcing function
        lower = np.full(n, r)
        diag = np.full(n, -2 * r)
        upper = np.full(n, r)
        if not dirichlet[0]:
            upper[0] = 2 * r
        if not dirichlet[1]:
            lower[-1] = 2 * r
        return lower, diag, upper

    lower, diag, upper = operator()

    def apply(u):
        out = diag * u
        out[:-1] += upper[:-1] * u[1:]
        out[1:] += lower[1:] * u[:-1]
        return out

    def force(t):
        f = np.zeros(n)
        if not dirichlet[0]:
            f[0] = -2 * r * h * mu0(t)
        if not dirichlet[1]:
            f[-1] = 2 * r * h * mu1(t)
        return f

    def solve(theta, u, t, step):
        # (I - theta step L) v = (I + (1 - theta) step L) u + forcing
        rhs = u + (1 - theta) * step * (apply(u) + force(t)) + theta * step * force(t + step)
        ab = np.zeros((3, n))
        ab[0, 1:] = -theta * step * upper[:-1]
        ab[1] = 1 - theta * step * diag
        ab[2, :-1] = -theta * step * lower[1:]
        if dirichlet[0]:
            ab[1, 0], ab[0, 1], rhs[0] = 1.0, 0.0, mu0(t + step)
        if dirichlet[1]:
            ab[1, -1], ab[2, -2], rhs[-1] = 1.0, 0.0, mu1(t + step)
        return solve_banded((1, 1), ab, rhs)

    out = np.empty((n_steps + 1, n))
    u = np.array(y0, dtype=float)
    out[0] = u
    t = 0.0
    for k in range(n_steps):
        if k < startup:
            # two half steps of backward Euler
            u = solve(1.0, u, t, dt / 2)
            u = solve(1.0, u, t + dt / 2, dt / 2)
        else:
            u = solve(0.5, u, t, dt)
        t += dt
        out[k + 1] = u
    return out
