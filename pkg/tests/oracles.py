"""Independent reference implementations used only by the tests.

Each oracle is written from the textbook definition with plain loops and
shares no code with the package.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

DIRECTIONS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))


# ---------------------------------------------------------------------------
# GLCM / Haralick


def quantize_oracle(pixels, levels=8):
    return [[int(p) * levels // 256 for p in row] for row in pixels]


def glcm_counts_oracle(q, offset, distance, levels=8):
    """Visit every pixel pair (p, p + distance * offset) and count both orders."""
    h, w = len(q), len(q[0])
    counts = [[0] * levels for _ in range(levels)]
    for r in range(h):
        for c in range(w):
            r2, c2 = r + offset[0] * distance, c + offset[1] * distance
            if 0 <= r2 < h and 0 <= c2 < w:
                a, b = q[r][c], q[r2][c2]
                counts[a][b] += 1
                counts[b][a] += 1
    return counts


def normalize(counts):
    total = sum(sum(row) for row in counts)
    return [[v / total for v in row] for row in counts]


def _h(values):
    return -sum(v * math.log2(v) for v in values if v > 0)


def haralick_oracle(p):
    """The 13 statistics straight from their definitions (0-based gray levels, log base 2)."""
    n = len(p)
    px = [sum(p[i][j] for j in range(n)) for i in range(n)]
    py = [sum(p[i][j] for i in range(n)) for j in range(n)]
    mx = sum(i * px[i] for i in range(n))
    my = sum(j * py[j] for j in range(n))
    sx = math.sqrt(sum((i - mx) ** 2 * px[i] for i in range(n)))
    sy = math.sqrt(sum((j - my) ** 2 * py[j] for j in range(n)))
    psum = [0.0] * (2 * n - 1)
    pdiff = [0.0] * n
    for i in range(n):
        for j in range(n):
            psum[i + j] += p[i][j]
            pdiff[abs(i - j)] += p[i][j]

    f1 = sum(p[i][j] ** 2 for i in range(n) for j in range(n))
    f2 = sum(k * k * pdiff[k] for k in range(n))
    f3 = ((sum(i * j * p[i][j] for i in range(n) for j in range(n)) - mx * my) / (sx * sy)
          if sx * sy > 0 else 0.0)
    f4 = sum((i - mx) ** 2 * p[i][j] for i in range(n) for j in range(n))
    f5 = sum(p[i][j] / (1 + (i - j) ** 2) for i in range(n) for j in range(n))
    f6 = sum(k * psum[k] for k in range(2 * n - 1))
    f7 = sum((k - f6) ** 2 * psum[k] for k in range(2 * n - 1))
    f8 = _h(psum)
    f9 = _h([p[i][j] for i in range(n) for j in range(n)])
    dmean = sum(k * pdiff[k] for k in range(n))
    f10 = sum((k - dmean) ** 2 * pdiff[k] for k in range(n))
    f11 = _h(pdiff)
    hx, hy = _h(px), _h(py)
    hxy1 = -sum(p[i][j] * math.log2(px[i] * py[j])
                for i in range(n) for j in range(n) if p[i][j] > 0)
    hxy2 = _h([px[i] * py[j] for i in range(n) for j in range(n)])
    f12 = (f9 - hxy1) / max(hx, hy) if max(hx, hy) > 0 else 0.0
    f13 = math.sqrt(max(0.0, 1 - math.exp(-2 * (hxy2 - f9))))
    return [f1, f2, f3, f4, f5, f6, f7, f8, f9, f10, f11, f12, f13]


def feature_vector_oracle(pixels, distances=(1, 3, 5), levels=8):
    q = quantize_oracle(pixels, levels)
    out = []
    for d in distances:
        blocks = [haralick_oracle(normalize(glcm_counts_oracle(q, o, d, levels))) for o in DIRECTIONS]
        out.extend(v for b in blocks for v in b)
        out.extend(sum(b[f] for b in blocks) / 4 for f in range(13))
    return out


# ---------------------------------------------------------------------------
# SVM dual


def dual_value(alpha, y, gram):
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ gram @ ay)


def active_set_qp_oracle(gram, y, C):
    """Maximise the soft-margin dual by enumerating every at-bound / free pattern.

    For each assignment of the variables to {0, C, free} the free block is the
    solution of the equality-constrained KKT linear system; feasible candidates
    are compared and the best objective returned. Exponential, so only for a
    handful of points.
    """
    n = len(y)
    Q = gram * np.outer(y, y)
    best = (-np.inf, None)
    for pattern in itertools.product((0, 1, 2), repeat=n):  # 0 -> 0, 1 -> C, 2 -> free
        alpha = np.array([C if s == 1 else 0.0 for s in pattern])
        free = [i for i, s in enumerate(pattern) if s == 2]
        if free:
            fixed = [i for i in range(n) if i not in free]
            m = len(free)
            # [Q_ff  y_f] [a_f]   [1 - Q_fF a_F]
            # [y_f^T  0 ] [ b ] = [ -y_F . a_F ]
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = Q[np.ix_(free, free)]
            A[:m, m] = y[free]
            A[m, :m] = y[free]
            rhs = np.zeros(m + 1)
            rhs[:m] = 1.0 - Q[np.ix_(free, fixed)] @ alpha[fixed]
            rhs[m] = -float(y[fixed] @ alpha[fixed])
            try:
                sol = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                continue
            alpha[free] = sol[:m]
        if np.any(alpha < -1e-12) or np.any(alpha > C + 1e-12) or abs(float(alpha @ y)) > 1e-9:
            continue
        value = dual_value(np.clip(alpha, 0, C), y, gram)
        if value > best[0]:
            best = (value, np.clip(alpha, 0, C))
    return best


def random_feasible_duals(y, C, count, rng):
    """Box samples rescaled so that sum(alpha * y) = 0, staying inside [0, C].

    The overall scale is log-uniform over five decades so the sample covers
    the small-alpha region where good dual points live, not only the corner
    near C.
    """
    pos, neg = y > 0, y < 0
    out = []
    for _ in range(count):
        a = rng.uniform(0, 1, size=len(y)) * C * 10.0 ** rng.uniform(-5, 0)
        sp, sn = a[pos].sum(), a[neg].sum()
        if sp > sn:
            a[pos] *= sn / sp
        else:
            a[neg] *= sp / sn
        out.append(a)
    return out


# ---------------------------------------------------------------------------
# finite differences


def numeric_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to every entry of ``x`` (in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(b)))))


def cross_entropy_oracle(logits, labels):
    """Mean softmax cross-entropy evaluated in extended precision.

    Differencing a float64 loss at h=1e-5 loses about eps/h of absolute
    accuracy, which swamps gradient components near 1e-7; long double keeps
    the finite-difference reference well below that.
    """
    z = np.asarray(logits, dtype=np.longdouble)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return np.mean(log_norm - z[np.arange(len(z)), labels])


def cross_entropy_gradient_oracle(logits, labels, h=1e-5):
    x = np.asarray(logits, dtype=np.longdouble).copy()
    return numeric_gradient(lambda: cross_entropy_oracle(x, labels), x, h).astype(np.float64)
