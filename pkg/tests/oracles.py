"""Brute-force reference implementations (explicit loops, no shared code with the package)."""

import math


def softmax_loop(z, beta=1.0):
    m = max(z)
    e = [math.exp((v - m) / beta) for v in z]
    s = 0.0
    for v in e:
        s += v
    return [v / s for v in e]


def cross_entropy_loop(scores, target):
    m = max(scores)
    s = 0.0
    for v in scores:
        s += math.exp(v - m)
    lse = m + math.log(s)
    total = 0.0
    for v, t in zip(scores, target):
        if t > 0:
            total -= t * (v - lse)
    return total


def gt_distribution_loop(gt, h, w, n_s=3, n_k=5):
    std = n_k // 2
    half = n_s // 2
    cr = int(math.floor(gt[0] + 0.5))
    cc = int(math.floor(gt[1] + 0.5))
    out = [[0.0] * w for _ in range(h)]
    total = 0.0
    for i in range(h):
        for j in range(w):
            if abs(i - cr) <= half and abs(j - cc) <= half:
                d2 = (i - gt[0]) ** 2 + (j - gt[1]) ** 2
                out[i][j] = math.exp(-d2 / (2.0 * std * std))
                total += out[i][j]
    for i in range(h):
        for j in range(w):
            out[i][j] /= total
    return out


def kernel_soft_argmax_loop(m, sigma, beta_eval):
    h, w = len(m), len(m[0])
    best, bi, bj = -math.inf, 0, 0
    for i in range(h):
        for j in range(w):
            if m[i][j] > best:
                best, bi, bj = m[i][j], i, j
    z = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            g = math.exp(-((i - bi) ** 2 + (j - bj) ** 2) / (2.0 * sigma * sigma))
            z[i][j] = g * m[i][j] / beta_eval
    zmax = max(max(row) for row in z)
    total = er = ec = 0.0
    for i in range(h):
        for j in range(w):
            p = math.exp(z[i][j] - zmax)
            total += p
            er += p * i
            ec += p * j
    return er / total, ec / total


def pck_loop(preds, gts, alpha, theta):
    hits = 0
    for (pr, pc), (gr, gc) in zip(preds, gts):
        if math.sqrt((pr - gr) ** 2 + (pc - gc) ** 2) <= alpha * theta:
            hits += 1
    return hits / len(gts)


def bilinear_loop(grid, row, col):
    h, w = len(grid), len(grid[0])
    total = 0.0
    for i in range(h):
        for j in range(w):
            wr = max(0.0, 1.0 - abs(row - i))
            wc = max(0.0, 1.0 - abs(col - j))
            total += wr * wc * grid[i][j]
    return total


def correlation_loop(cells_a, cells_b, normalize=True, beta_a=1.0, beta_b=1.0):
    def unit(v):
        n = math.sqrt(sum(x * x for x in v))
        return [x / max(n, 1e-8) for x in v] if normalize else list(v)

    a = [unit(v) for v in cells_a]
    b = [unit(v) for v in cells_b]
    out = []
    for va in a:
        row = []
        for vb in b:
            s = 0.0
            for x, y in zip(va, vb):
                s += (x / beta_a) * (y / beta_b)
            row.append(s)
        out.append(row)
    return out
