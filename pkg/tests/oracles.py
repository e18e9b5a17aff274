"""Independent reference implementations used only by the tests.

Nothing here calls into the package: each oracle is written from first
principles so that agreement with the library is meaningful.
"""

import math

import numpy as np
from scipy import integrate


def jacobi_eig(M, sweeps=100, tol=1e-14):
    """Cyclic Jacobi eigenvalues of a symmetric matrix, descending."""
    A = np.array(M, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(sweeps):
        off = math.sqrt(np.sum(A**2) - np.sum(np.diag(A) ** 2))
        if off < tol * max(1.0, np.linalg.norm(A)):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    w = np.diag(A).copy()
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def jacobi_singular_values(M, sweeps=100, tol=1e-15):
    """One-sided Jacobi (Hestenes) singular values, descending."""
    U = np.array(M, dtype=float)
    if U.shape[0] < U.shape[1]:
        U = U.T.copy()
    n = U.shape[1]
    for _ in range(sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = U[:, p] @ U[:, p]
                beta = U[:, q] @ U[:, q]
                gamma = U[:, p] @ U[:, q]
                if abs(gamma) <= tol * math.sqrt(alpha * beta) or gamma == 0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1 + zeta * zeta))
                c = 1 / math.sqrt(1 + t * t)
                s = c * t
                up = U[:, p].copy()
                U[:, p] = c * up - s * U[:, q]
                U[:, q] = s * up + c * U[:, q]
        if not rotated:
            break
    return np.sort(np.linalg.norm(U, axis=0))[::-1]


def chi2_sf_quad(x, k):
    """``P(chi2_k >= x)`` by adaptive quadrature of the density."""
    if x <= 0:
        return 1.0
    logc = -(k / 2) * math.log(2) - math.lgamma(k / 2)

    def dens(t):
        if t <= 0:
            return 0.0
        return math.exp(logc + (k / 2 - 1) * math.log(t) - t / 2)

    # integrate the smaller tail for accuracy
    mode = max(k - 2, 0)
    if x > mode + 1:
        val, _ = integrate.quad(dens, x, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val
    val, _ = integrate.quad(dens, 0, x, epsabs=1e-13, epsrel=1e-12, limit=200)
    return 1.0 - val


def normal_sf_quad(z):
    dens = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    if z >= 0:
        return integrate.quad(dens, z, np.inf, epsabs=1e-14, epsrel=1e-12)[0]
    return 1.0 - integrate.quad(dens, -z, np.inf, epsabs=1e-14, epsrel=1e-12)[0]


def normal_quantile_bisect(p, lo=-40.0, hi=40.0):
    """Solve ``1 - sf(z) = p`` by bisection on the quadrature CDF."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 1.0 - normal_sf_quad(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def interpret_network(dims, theta, z, p=2, clamp=30.0):
    """Straight-line scalar evaluation of a RePU network from its flat
    parameter vector (layer by layer, W row-major then bias)."""
    h = [float(v) for v in z]
    pos = 0
    layers = list(zip(dims[:-1], dims[1:]))
    for l, (d_in, d_out) in enumerate(layers):
        W = [[theta[pos + i * d_in + j] for j in range(d_in)] for i in range(d_out)]
        pos += d_in * d_out
        a = [theta[pos + i] for i in range(d_out)]
        pos += d_out
        nxt = []
        for i in range(d_out):
            s = a[i]
            for j in range(d_in):
                s += W[i][j] * h[j]
            if l < len(layers) - 1:
                s = min(max(s, -clamp), clamp)
                s = max(s, 0.0) ** p
            nxt.append(s)
        h = nxt
    return h


def brute_auc(scores, labels):
    num = 0
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    for a in pos:
        for b in neg:
            if a > b:
                num += 1
    return num / (len(pos) * len(neg))


def penalty_direct(B, layers, theta):
    """Row/column group norms, depth penalty and l1 norm by explicit loops."""
    rho1 = sum(math.sqrt(sum(v * v for v in row)) for row in B.tolist())
    rho2 = sum(math.sqrt(sum(v * v for v in col)) for col in B.T.tolist())
    rho31 = 0.0
    for l, (W, a) in enumerate(layers):
        if 0 < l < len(layers) - 1 and W.shape[0] == W.shape[1]:
            acc = 0.0
            for i in range(W.shape[0]):
                for j in range(W.shape[1]):
                    acc += (W[i, j] - (1.0 if i == j else 0.0)) ** 2
            rho31 += math.sqrt(acc) + math.sqrt(sum(v * v for v in a))
    l1 = sum(abs(v) for v in theta)
    return rho1, rho2, rho31, l1
