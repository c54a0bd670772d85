"""Slow reference implementations written directly from the definitions.

Plain Python loops over ``math`` functions, sharing no code with the
package, so agreement between the two is meaningful.
"""

import math


def sq_dist(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def cos(a, b):
    return dot(a, b) / math.sqrt(dot(a, a) * dot(b, b))


def lse(vals):
    m = max(vals)
    return m + math.log(sum(math.exp(v - m) for v in vals))


def contrastive(Z, y, m):
    n = len(Z)
    t = c = 0.0
    for i in range(n):
        for j in range(n):
            D = math.sqrt(sq_dist(Z[i], Z[j]))
            if y[i] == y[j]:
                t += D * D
            else:
                c += max(m - D, 0.0) ** 2
    return t / n, c / n


def center(Z, y):
    total = 0.0
    for k in set(y):
        members = [z for z, lab in zip(Z, y) if lab == k]
        c = [sum(col) / len(members) for col in zip(*members)]
        total += sum(sq_dist(z, c) for z in members)
    return 0.5 * total


def snca(Z, y, sigma):
    n = len(Z)
    t = c = 0.0
    for i in range(n):
        pos = [cos(Z[i], Z[j]) / sigma for j in range(n) if j != i and y[j] == y[i]]
        allv = [cos(Z[i], Z[j]) / sigma for j in range(n) if j != i]
        t -= lse(pos)
        c += lse(allv)
    return t / n, c / n


def multi_similarity(Z, y, alpha, beta, margin):
    n = len(Z)
    t = c = 0.0
    for i in range(n):
        sp = sum(math.exp(-alpha * (cos(Z[i], Z[j]) - margin))
                 for j in range(n) if j != i and y[j] == y[i])
        sn = sum(math.exp(beta * (cos(Z[i], Z[j]) - margin))
                 for j in range(n) if y[j] != y[i])
        t += math.log(1.0 + sp) / alpha
        c += math.log(1.0 + sn) / beta
    return t / n, c / n


def cross_entropy(Z, y, theta, bias, eps):
    n, K = len(Z), len(theta)
    total = 0.0
    for i in range(n):
        logits = [dot(theta[k], Z[i]) + (bias[k] if bias is not None else 0.0)
                  for k in range(K)]
        norm = lse(logits)
        for k in range(K):
            t = 1.0 - eps if k == y[i] else eps / (K - 1)
            total -= t * (logits[k] - norm)
    return total / n


def spce(Z, y, K):
    n = len(Z)
    t = c = 0.0
    for i in range(n):
        for j in range(n):
            if y[j] == y[i]:
                t -= dot(Z[i], Z[j])
        scores = []
        for k in range(K):
            scores.append(sum(dot(Z[i], Z[j]) for j in range(n) if y[j] == k) / n)
        c += lse(scores)
    return t / (n * n), c / n


def pce(Z, y, P, lam):
    n, K, d = len(Z), len(P[0]), len(Z[0])
    t = 0.0
    for i in range(n):
        for j in range(n):
            if y[j] == y[i]:
                t -= dot(Z[i], Z[j])
    t /= 2.0 * lam * n * n
    soft = [[sum(P[i][k] * Z[i][a] for i in range(n)) / n for a in range(d)]
            for k in range(K)]
    c = 0.0
    for i in range(n):
        c += lse([dot(Z[i], soft[k]) / lam for k in range(K)])
    c = c / n - sum(dot(s, s) for s in soft) / (2.0 * lam)
    return t, c


def average_precision(dists, positive):
    """Exact AP of one query: ``dists`` to the other points, ``positive`` flags."""
    order = sorted(range(len(dists)), key=lambda j: (dists[j], j))
    hits, total = 0, 0.0
    for rank, j in enumerate(order, start=1):
        if positive[j]:
            hits += 1
            total += hits / rank
    return total / hits


def binned_average_precision(dists, positive, bins):
    """AP where everything in the same distance cell shares the worst rank."""
    cell = [min(int(min(max(x, 0.0), 2.0) * bins / 2.0), bins - 1) for x in dists]
    total = 0.0
    for a in range(len(dists)):
        if positive[a]:
            ahead = [b for b in range(len(dists)) if cell[b] <= cell[a]]
            total += sum(1 for b in ahead if positive[b]) / len(ahead)
    return total / sum(1 for p in positive if p)


def recall(Z, y, ks, metric):
    n = len(Z)
    out = []
    for k in ks:
        scores = []
        for i in range(n):
            if sum(1 for j in range(n) if j != i and y[j] == y[i]) == 0:
                continue
            d = [(metric(Z[i], Z[j]), j) for j in range(n) if j != i]
            d.sort()
            scores.append(1.0 if any(y[j] == y[i] for _, j in d[:k]) else 0.0)
        out.append(sum(scores) / len(scores))
    return out


def mutual_information(p):
    pz = [sum(row) for row in p]
    py = [sum(p[z][k] for z in range(len(p))) for k in range(len(p[0]))]
    total = 0.0
    for z in range(len(p)):
        for k in range(len(p[0])):
            if p[z][k] > 0:
                total += p[z][k] * math.log(p[z][k] / (pz[z] * py[k]))
    return total


def conditional_cross_entropy(p, q):
    return -sum(p[z][k] * math.log(q[z][k])
                for z in range(len(p)) for k in range(len(p[0])) if p[z][k] > 0)


def eig_2x2(a, b, c):
    """Eigenvalues of ``[[a, b], [b, c]]`` from the characteristic polynomial."""
    mid, rad = (a + c) / 2.0, math.sqrt(((a - c) / 2.0) ** 2 + b * b)
    return mid - rad, mid + rad
