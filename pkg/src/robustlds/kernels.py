"""Hot loops, written in the numba-compatible subset of numpy.

Each public kernel is wrapped with :func:`maybe_njit`; the plain-python
original is always reachable through ``kernel.py_func``.

The 1-D closed loop is homogeneous of degree one in (x, u, w, f), so when
the state energy grows past ``_RESCALE`` every stored quantity is divided by
a common factor and the log of that factor is accumulated.  Gains and the
normalized game variables are scale-free and unaffected.
"""

import math

import numpy as np

from ._accel import maybe_njit

_RESCALE = 1e100

F_SCRIPTED = 0
F_LB_GAME = 1

CTRL_CERT_EQUIV = 0
CTRL_LINEAR = 1


@maybe_njit
def sign1(v):
    """Sign with the convention sign(0) = 1."""
    return 1.0 if v >= 0.0 else -1.0


@maybe_njit
def lb_nu(z, beta, delta, a0, gamma0, mu):
    """Adversary move in the normalized game."""
    lo = a0 + (4.0 + mu) * gamma0
    hi = a0 + (8.0 + 3.0 * mu) * gamma0
    c0 = a0 + (6.0 + 2.0 * mu) * gamma0
    ad = abs(delta)
    if ad >= 2.0 * gamma0 and lo <= beta <= hi:
        return 0.0
    s = sign1(z * (beta - c0))
    if ad >= (2.0 + mu) * gamma0:
        return -mu * gamma0 * s
    return -(4.0 + mu) * gamma0 * s


@maybe_njit
def normalized_step(z, beta, theta, delta, nu):
    r = math.sqrt(1.0 + z * z)
    return nu + delta, beta + z * nu / r, (theta + nu * nu) / (1.0 + z * z)


@maybe_njit
def scalar_closed_loop(a, M, h, T, ctrl, k_lin, f_mode, f_arr, a0, gamma0, mu):
    """1-D plant ``x' = a x + u + w + f`` under a scalar controller.

    ``ctrl`` selects certainty equivalence (clip to [-M, M]) or fixed ``u = -k_lin x``.
    ``w`` is the greedy aligned misspecification at budget ``h``.  ``f`` is
    either ``f_arr`` (scripted, rescaled along with the state) or the
    lower-bound adversary with parameters ``(a0, gamma0, mu)``; while
    ``sum_{s<t} x_s^2 = 0`` that adversary sets the innovation
    ``x_{t+1} - u_t`` to 1, so the state sequence does not depend on ``a``.

    Returns ``(logs, hist)`` where ``logs = [log sum x^2, log sum f^2,
    log sum w^2, max_t (spent_t - h^2 S_t)/S_t]`` and ``hist`` has rows
    ``z, beta, theta, delta, nu, a_hat, log|x|`` over ``t = 0..T`` (NaN where
    undefined).
    """
    hist = np.full((7, T + 1), np.nan)
    x = 0.0
    xi_prev = 0.0
    x_prev = 0.0
    P = 0.0  # sum_{s<t} x_s^2
    Qg = 0.0  # sum_{s<t} x_s xi_s
    theta = 0.0
    R0 = 0.0  # sum of xi_s^2 over the zero states before t0
    started = False
    sq_x = 0.0
    sq_f = 0.0
    sq_w = 0.0
    spent = 0.0
    log_c = 0.0
    worst = -np.inf
    hist[6, 0] = -np.inf
    for t in range(T):
        if t > 0:
            if x_prev == 0.0 and not started:
                R0 += xi_prev * xi_prev
            P += x_prev * x_prev
            Qg += x_prev * xi_prev
            if P > 0.0 and not started:
                theta = R0 / P
                started = True
        if ctrl == CTRL_CERT_EQUIV:
            ahat = 0.0
            if P > 0.0:
                ahat = min(max(Qg / P, -M), M)
        else:
            ahat = k_lin
        u = -ahat * x if t > 0 else 0.0
        hist[5, t] = ahat
        w = 0.0
        if t > 0 and h > 0.0:
            r2 = h * h * sq_x - spent
            if r2 > 0.0 and x != 0.0:
                w = math.sqrt(r2) * sign1(x)
            spent += w * w
            if sq_x > 0.0:
                worst = max(worst, (spent - h * h * sq_x) / sq_x)
        beta = np.nan
        if P > 0.0:
            beta = Qg / P
            root = math.sqrt(P + x * x)
            z = x / math.sqrt(P)
            delta = (u + beta * x) / root
            hist[0, t] = z
            hist[1, t] = beta
            hist[2, t] = theta
            hist[3, t] = delta
        if f_mode == F_SCRIPTED:
            f = f_arr[t] * math.exp(-log_c) if t < f_arr.shape[0] else 0.0
        elif P == 0.0:
            # unit innovation; equals f = 1 while x = 0
            f = math.exp(-log_c) - a * x - w
        else:
            nu_adv = lb_nu(hist[0, t], beta, hist[3, t], a0, gamma0, mu)
            f = nu_adv * math.sqrt(P + x * x) + (beta - a) * x - w
        xi = a * x + w + f
        if P > 0.0:
            root = math.sqrt(P + x * x)
            nu = (xi - beta * x) / root
            z = hist[0, t]
            theta = (theta + nu * nu) / (1.0 + z * z)
            hist[4, t] = nu
        x_next = a * x + u + w + f
        sq_f += f * f
        sq_w += w * w
        sq_x += x_next * x_next
        x_prev = x
        xi_prev = xi
        x = x_next
        if sq_x > _RESCALE:
            c = math.sqrt(sq_x)
            c2 = sq_x
            x /= c
            x_prev /= c
            xi_prev /= c
            P /= c2
            Qg /= c2
            sq_x /= c2
            sq_f /= c2
            sq_w /= c2
            spent /= c2
            R0 /= c2
            log_c += math.log(c)
        hist[6, t + 1] = (math.log(abs(x)) + log_c) if x != 0.0 else -np.inf
    # state at T
    if x_prev == 0.0 and not started:
        R0 += xi_prev * xi_prev
    P += x_prev * x_prev
    Qg += x_prev * xi_prev
    if P > 0.0 and not started:
        theta = R0 / P
    if P > 0.0:
        hist[0, T] = x / math.sqrt(P)
        hist[1, T] = Qg / P
        hist[2, T] = theta
    if ctrl == CTRL_CERT_EQUIV:
        hist[5, T] = min(max(Qg / P, -M), M) if P > 0.0 else 0.0
    else:
        hist[5, T] = k_lin
    logs = np.empty(4)
    logs[0] = (math.log(sq_x) + 2.0 * log_c) if sq_x > 0.0 else -np.inf
    logs[1] = (math.log(sq_f) + 2.0 * log_c) if sq_f > 0.0 else -np.inf
    logs[2] = (math.log(sq_w) + 2.0 * log_c) if sq_w > 0.0 else -np.inf
    logs[3] = worst
    return logs, hist


@maybe_njit
def normalized_game(z0, beta0, theta0, T, ctrl, k_lin, M, a0, gamma0, mu):
    """Run the normalized game from ``(z0, beta0, theta0)`` for ``T`` moves.

    The controller's normalized move is ``delta = (beta - a_hat) z / sqrt(1 + z^2)``
    with ``a_hat = clip(beta, -M, M)`` (certainty equivalence) or ``a_hat = k_lin``.
    Returns rows ``z, beta, theta, delta, nu`` of length ``T + 1``.
    """
    out = np.full((5, T + 1), np.nan)
    z, beta, theta = z0, beta0, theta0
    for t in range(T):
        if ctrl == CTRL_CERT_EQUIV:
            ahat = min(max(beta, -M), M)
        else:
            ahat = k_lin
        delta = (beta - ahat) * z / math.sqrt(1.0 + z * z)
        nu = lb_nu(z, beta, delta, a0, gamma0, mu)
        out[0, t] = z
        out[1, t] = beta
        out[2, t] = theta
        out[3, t] = delta
        out[4, t] = nu
        z, beta, theta = normalized_step(z, beta, theta, delta, nu)
    out[0, T] = z
    out[1, T] = beta
    out[2, T] = theta
    return out


@maybe_njit
def _clip_spectral(A, radius):
    U, s, Vt = np.linalg.svd(A)
    changed = False
    for i in range(s.shape[0]):
        if s[i] > radius:
            s[i] = radius
            changed = True
    if not changed:
        return A.copy()
    return (U * s) @ Vt


@maybe_njit
def _project_group_l1(C, radius):
    """Project columns of ``C`` onto ``{sum_i ||c_i|| <= radius}``."""
    n = C.shape[1]
    norms = np.empty(n)
    for i in range(n):
        norms[i] = math.sqrt(np.sum(C[:, i] ** 2))
    if norms.sum() <= radius:
        return C.copy()
    srt = np.sort(norms)[::-1]
    css = 0.0
    tau = 0.0
    for j in range(n):
        css += srt[j]
        cand = (css - radius) / (j + 1)
        if srt[j] - cand > 0.0:
            tau = cand
    out = np.zeros_like(C)
    for i in range(n):
        if norms[i] > tau:
            out[:, i] = C[:, i] * ((norms[i] - tau) / norms[i])
    return out


@maybe_njit
def phi_value(A, V, Y):
    d = A.shape[0]
    best = 0.0
    for i in range(V.shape[1]):
        s = 0.0
        for r in range(d):
            acc = -Y[r, i]
            for c in range(A.shape[1]):
                acc += A[r, c] * V[c, i]
            s += acc * acc
        best = max(best, math.sqrt(s))
    return best


@maybe_njit
def phi_dual_value(C, V, Y, radius):
    G = C @ V.T
    nuc = np.sum(np.linalg.svd(G)[1])
    return -np.sum(C * Y) - radius * nuc


@maybe_njit
def phi_saddle(A0, V, Y, radius, tol, max_iter, check_every):
    """Extragradient on ``min_{||A||<=radius} max_{sum||c_i||<=1} sum c_i^T (A v_i - y_i)``.

    Returns ``(A_best, upper, lower, iters)`` where ``upper = Phi(A_best)`` and
    ``lower`` is a certified lower bound on the constrained minimum.
    """
    d = A0.shape[0]
    n = V.shape[1]
    A = _clip_spectral(A0, radius)
    C = np.zeros((d, n))
    vnorm = np.linalg.svd(V)[1][0]
    eta = 0.9 / max(vnorm, 1e-300)
    A_sum = np.zeros_like(A)
    C_sum = np.zeros_like(C)
    best_A = A.copy()
    upper = phi_value(A, V, Y)
    lower = -np.inf
    it = 0
    while it < max_iter:
        # gradient of the bilinear form
        gA = C @ V.T
        gC = A @ V - Y
        A_half = _clip_spectral(A - eta * gA, radius)
        C_half = _project_group_l1(C + eta * gC, 1.0)
        gA = C_half @ V.T
        gC = A_half @ V - Y
        A = _clip_spectral(A - eta * gA, radius)
        C = _project_group_l1(C + eta * gC, 1.0)
        A_sum += A_half
        C_sum += C_half
        it += 1
        if it % check_every == 0 or it == max_iter:
            A_avg = _clip_spectral(A_sum / it, radius)
            for cand in (A_avg, A):
                val = phi_value(cand, V, Y)
                if val < upper:
                    upper = val
                    best_A = cand.copy()
            lower = max(lower, phi_dual_value(C_sum / it, V, Y, radius))
            lower = max(lower, phi_dual_value(C, V, Y, radius))
            if upper - lower <= tol:
                break
    return best_A, upper, max(lower, 0.0), it
