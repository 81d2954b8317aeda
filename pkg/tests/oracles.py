"""Reference computations that share no code with the package."""
import itertools
import math

import numpy as np


def power_deflation_eigs(h, iters=20000, tol=1e-15):
    """Eigenvalues of a symmetric PSD matrix by power iteration + deflation."""
    h = np.array(h, dtype=float)
    n = h.shape[0]
    out = []
    rng = np.random.default_rng(12345)
    for _ in range(n):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(iters):
            y = h @ x
            ny = np.linalg.norm(y)
            if ny == 0:
                lam = 0.0
                break
            y /= ny
            new = y @ h @ y
            if abs(new - lam) <= tol * max(abs(new), 1e-300) and np.linalg.norm(y - x) < 1e-12:
                lam = new
                x = y
                break
            lam, x = new, y
        out.append(lam)
        h = h - lam * np.outer(x, x)
    return np.sort(np.array(out))[::-1]


def jacobi_eigvals(h, tol=1e-15, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations."""
    a = np.array(h, dtype=float)
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * np.linalg.norm(a):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]


def gram_singular_values(a, method="jacobi"):
    a = np.asarray(a, dtype=float)
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    eigs = jacobi_eigvals(gram) if method == "jacobi" else power_deflation_eigs(gram)
    return np.sqrt(np.clip(eigs, 0.0, None))


def polar_factor(a):
    """a (a^T a)^{-1/2} via a symmetric eigendecomposition."""
    w, q = np.linalg.eigh(a.T @ a)
    return a @ (q / np.sqrt(w)) @ q.T


def ising_exact(l, t):
    """Exact <E> and <|m|> (m per site) by enumerating all 2^(l*l) states."""
    n = l * l
    z = e_acc = m_acc = 0.0
    energies = []
    for bits in itertools.product((-1, 1), repeat=n):
        s = np.array(bits).reshape(l, l)
        e = 0
        for i in range(l):
            for j in range(l):
                e -= s[i, j] * (s[(i + 1) % l, j] + s[i, (j + 1) % l])
        energies.append((e, abs(s.sum()) / n))
    e0 = min(e for e, _ in energies)
    for e, m in energies:
        w = math.exp(-(e - e0) / t)
        z += w
        e_acc += w * e
        m_acc += w * m
    return e_acc / z, m_acc / z


def infonce_naive(z, za, tau):
    """NT-Xent by explicit loops over anchors."""
    views = [np.asarray(r, dtype=float) for r in np.vstack([z, za])]
    m = len(views)
    n = m // 2
    total = 0.0
    for i in range(m):
        pos = (i + n) % m
        denom = sum(math.exp(float(views[i] @ views[k]) / tau) for k in range(m) if k != i)
        total += -math.log(math.exp(float(views[i] @ views[pos]) / tau) / denom)
    return total / m


def central_difference(f, params, h=1e-5):
    """Central finite-difference gradient of scalar f w.r.t. every entry of params (in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads
