"""Independent pure-Python primitive evaluation, used as a brute-force oracle.

Deliberately avoids numpy and the package's helpers: every statistic is
recomputed from plain lists with explicit loops.
"""
import math

MEAN = ["strong-rise", "mild-rise", "stable", "mild-drop", "strong-drop"]
VOL = ["surge", "rise", "stable", "fall", "calm"]


def pmean(v):
    total = 0.0
    for x in v:
        total += x
    return total / len(v)


def pstd(v):
    m = pmean(v)
    acc = 0.0
    for x in v:
        acc += (x - m) * (x - m)
    return math.sqrt(acc / len(v))


def diff(v):
    return [v[i + 1] - v[i] for i in range(len(v) - 1)]


def band(stat, t1, t2, names):
    if stat > t2:
        return names[0]
    if stat > t1:
        return names[1]
    if stat >= -t1:
        return names[2]
    if stat >= -t2:
        return names[3]
    return names[4]


def chunks(Y, n):
    size = len(Y) // n
    return [Y[i * size : (i + 1) * size] for i in range(n)]


def shape_label(signs):
    nz = [s for s in signs if s != 0]
    if not nz:
        return "oscillate"
    if all(s > 0 for s in nz):
        return "ascend"
    if all(s < 0 for s in nz):
        return "descend"
    changes = [(nz[i], nz[i + 1]) for i in range(len(nz) - 1) if nz[i] != nz[i + 1]]
    if len(changes) == 1:
        return "peak" if changes[0] == (1, -1) else "trough"
    return "oscillate"


def lag_label(X, Y, n, alpha, eps, k1, k2, rho, eta):
    mx, sx, sdx = pmean(X), pstd(X), pstd(diff(X))
    a = []
    for u in chunks(Y, n):
        level = abs((pmean(u) - mx) / max(sx, eps))
        vol = abs(math.log((pstd(diff(u)) + eps) / (sdx + eps)))
        a.append(level + alpha * vol)
    total = sum(a)
    pi = [1.0 / n] * n if total < eps else [x / total for x in a]
    c = sum(pi[i] * i / (n - 1) for i in range(n))
    best = 0
    for i in range(1, n):
        if pi[i] > pi[best]:
            best = i
    d = sum(pi[best + 1 :])
    q = max(pi)
    if q <= eta:
        return "diffuse"
    if c > k2:
        return "late"
    stage = "early" if c <= k1 else "mid"
    return stage + ("-fade" if d <= rho else "-persist")


def brute_force_labels(X, Y, thr):
    """(mean, vol, shape, lag) labels for plain-list windows under a ThresholdSet-like object."""
    X, Y = [float(x) for x in X], [float(y) for y in Y]
    eps = thr.eps
    dmu = (pmean(Y) - pmean(X)) / max(pstd(X), eps)
    rs = math.log((pstd(diff(Y)) + eps) / (pstd(diff(X)) + eps))
    means = [pmean(u) for u in chunks(Y, thr.n_fcst)]
    signs = []
    for i in range(len(means) - 1):
        g = means[i + 1] - means[i]
        signs.append(1 if g > thr.tau_shape else (-1 if g < -thr.tau_shape else 0))
    return (
        band(dmu, thr.tau1_mean, thr.tau2_mean, MEAN),
        band(rs, thr.tau1_vol, thr.tau2_vol, VOL),
        shape_label(signs),
        lag_label(X, Y, thr.n_fcst, thr.alpha, eps, thr.kappa1, thr.kappa2, thr.rho, thr.eta),
    )
