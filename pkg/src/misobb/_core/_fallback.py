"""Pure numpy centering and grid kernels (used when the extension is absent)."""

import numpy as np

OK, MAX_ITER, STALL = 0, 1, 2
FTOL_ULPS = 16.0


def _rate_terms(prob, s, need_deriv):
    """Rate cost and its derivatives with respect to the signal powers."""
    if prob.T.shape[0] == 0:
        return 0.0, None, None
    a = 1.0 / (prob.denom + s)
    r = np.bincount(prob.user, weights=np.log1p(s / prob.denom), minlength=prob.n_users)
    alpha = prob.alpha
    w = prob.weights
    if alpha >= 1:
        rf = np.maximum(r, prob.rate_floor)
    else:
        rf = r
    if alpha == 0:
        f = rf
    elif alpha == 1:
        f = np.log(rf)
    else:
        f = rf ** (1.0 - alpha) / (1.0 - alpha)
    val = -(w * f).sum()
    if not need_deriv:
        return val, None, None
    if alpha == 0:
        d1 = np.ones_like(r)
        d2 = np.zeros_like(r)
    else:
        d1 = rf ** (-alpha)
        d2 = -alpha * rf ** (-alpha - 1.0)
        below = r < prob.rate_floor
        d1[below] = 0.0
        d2[below] = 0.0
    u = prob.user
    grad_s = -w[u] * d1[u] * a
    same = u[:, None] == u[None, :]
    Hs = -(w[u] * d2[u])[:, None] * np.outer(a, a) * same
    Hs[np.diag_indices_from(Hs)] += w[u] * d1[u] * a * a
    return val, grad_s, Hs


def evaluate(prob, y, t):
    """Centering objective at ``y``; ``inf`` outside the domain."""
    y = np.asarray(y, float)
    slack = prob.h - prob.G @ y
    if slack.size and slack.min() <= 0:
        return np.inf
    s = prob.T @ y + prob.t0
    if s.size and (prob.denom + s).min() <= 0:
        return np.inf
    val = 0.0
    if prob.idx.shape[0]:
        ye = np.append(y, 0.0)
        R = prob.R0 + np.einsum("bp,bpij->bij", ye[prob.idx], prob.F)
        try:
            L = np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            return np.inf
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        if not np.all(np.isfinite(logdet)):
            return np.inf
        contrib = -prob.bw * logdet
        val += contrib[prob.bobj == 0].sum() + t * contrib[prob.bobj == 1].sum()
    rv, _, _ = _rate_terms(prob, s, False)
    val += t * (prob.c @ y + rv)
    if slack.size:
        val -= np.log(slack).sum()
    return float(val)


def derivatives(prob, y, t):
    """Gradient and Hessian of the centering objective (``y`` assumed interior)."""
    n = prob.n
    g = t * prob.c.copy()
    H = np.zeros((n, n))
    s = prob.T @ y + prob.t0
    _, gs, Hs = _rate_terms(prob, s, True)
    if gs is not None:
        g += t * (prob.T.T @ gs)
        H += t * (prob.T.T @ Hs @ prob.T)
    if prob.G.shape[0]:
        inv = 1.0 / (prob.h - prob.G @ y)
        g += prob.G.T @ inv
        Gs = prob.G * inv[:, None]
        H += Gs.T @ Gs
    nb = prob.idx.shape[0]
    if nb:
        ye = np.append(y, 0.0)
        R = prob.R0 + np.einsum("bp,bpij->bij", ye[prob.idx], prob.F)
        Rinv = np.linalg.inv(R)
        scale = np.where(prob.bobj == 1, t, 1.0) * prob.bw
        B = Rinv[:, None] @ prob.F  # (nb, p, d, d)
        pmax = prob.idx.shape[1]
        gb = -scale[:, None] * np.einsum("bpii->bp", B)
        Bf = B.reshape(nb, pmax, -1)
        Bt = B.transpose(0, 1, 3, 2).reshape(nb, pmax, -1)
        Hb = scale[:, None, None] * (Bf @ Bt.transpose(0, 2, 1))
        ge = np.bincount(prob.idx.ravel(), weights=gb.ravel(), minlength=n + 1)
        g += ge[:n]
        flat = (prob.idx[:, :, None] * (n + 1) + prob.idx[:, None, :]).ravel()
        He = np.bincount(flat, weights=Hb.ravel(), minlength=(n + 1) ** 2)
        H += He.reshape(n + 1, n + 1)[:n, :n]
    return g, H


def newton_direction(g, H):
    try:
        L = np.linalg.cholesky(H)
        z = np.linalg.solve(L, -g)
        dy = np.linalg.solve(L.T, z)
    except np.linalg.LinAlgError:
        dy = singular_direction(g, H)
    return dy


def singular_direction(g, H):
    """Newton step on the range of a semidefinite ``H`` (pseudo-inverse).

    Uses a symmetric eigendecomposition; SVD based least squares can fail to
    converge on the nearly singular Hessians met late on the central path.
    """
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(g))):
        return np.zeros_like(g)
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    keep = w > len(w) * np.finfo(float).eps * max(w[-1], 0.0)
    if not keep.any():
        return np.zeros_like(g)
    Vk = V[:, keep]
    return -Vk @ ((Vk.T @ g) / w[keep])


def center(prob, y, t, tol=1e-10, max_iter=100, ls_alpha=0.3, ls_beta=0.5, max_backtrack=60):
    """Damped Newton on the centering objective.

    Returns ``(y, iterations, newton_decrement_sq, status)``.
    """
    y = np.array(y, float)
    fy = evaluate(prob, y, t)
    if not np.isfinite(fy):
        raise ValueError("centering started outside the barrier domain")
    lam2 = np.inf
    for it in range(max_iter):
        g, H = derivatives(prob, y, t)
        dy = newton_direction(g, H)
        lam2 = float(-g @ dy)
        if lam2 / 2.0 <= tol:
            return y, it, lam2, OK
        step = 1.0
        slope = ls_alpha * float(g @ dy)
        # f itself carries roundoff of a few ulps of |f|; the Armijo test
        # cannot resolve decreases below that
        ftol = FTOL_ULPS * np.finfo(float).eps * max(1.0, abs(fy))
        for _ in range(max_backtrack):
            fn = evaluate(prob, y + step * dy, t)
            if fn <= fy + step * slope + ftol:
                break
            step *= ls_beta
        else:
            return y, it + 1, lam2, STALL
        y = y + step * dy
        fy = fn
    return y, max_iter, lam2, MAX_ITER


def grid_pairs(g11, g12, g21, g22, p1max, p2cap, p2coef, noise1, noise2, w1, w2, alpha,
               n_pow, rate_floor):
    """Best power pair of a two-user rank-one point for every direction pair.

    For directions ``a`` (user 1) and ``b`` (user 2): user 1 power is
    ``rho1 * p1max[a]`` and user 2 power is ``rho2 * min_c (p2cap[c, b] -
    p1 * p2coef[c, a, b])`` over budget rows ``c``, with ``rho`` on a uniform
    grid of ``n_pow`` intervals.  Returns ``(cost, i1, i2)``, each of shape
    ``(A, B)``, with the first minimizing power indices on ties.
    """
    rho = np.arange(n_pow + 1) / n_pow
    A, B = g11.shape[0], g22.shape[0]
    cost = np.empty((A, B))
    i1 = np.empty((A, B), np.intp)
    i2 = np.empty((A, B), np.intp)
    for a in range(A):
        p1 = rho * p1max[a]  # (R,)
        # cap for user 2 for each b and p1: (B, R)
        cap = np.min(p2cap[:, :, None] - p2coef[:, a, :, None] * p1[None, None, :], axis=0)
        cap = np.maximum(cap, 0.0)
        p2 = cap[:, :, None] * rho[None, None, :]  # (B, R1, R2)
        sig1 = p1[None, :, None] * g11[a]
        int1 = p2 * g21[:, None, None]
        sig2 = p2 * g22[:, None, None]
        int2 = p1[None, :, None] * g12[a]
        r1 = np.log1p(sig1 / (noise1 + int1))
        r2 = np.log1p(sig2 / (noise2 + int2))
        cst = -(w1 * _futil(r1, alpha, rate_floor) + w2 * _futil(r2, alpha, rate_floor))
        k = np.argmin(cst.reshape(B, -1), axis=1)
        cost[a] = cst.reshape(B, -1)[np.arange(B), k]
        i1[a], i2[a] = np.divmod(k, n_pow + 1)
    return cost, i1, i2


def _futil(r, alpha, floor):
    if alpha == 0:
        return r
    r = np.maximum(r, floor)
    if alpha == 1:
        return np.log(r)
    return r ** (1.0 - alpha) / (1.0 - alpha)
