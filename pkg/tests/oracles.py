"""Independent, deliberately naive re-implementations used as test oracles."""
from __future__ import annotations

import math
from itertools import combinations


def scalar_logits(layers, x):
    """layers: list of (W as nested lists [fan_in][fan_out], b list)."""
    a = list(x)
    for li, (w, b) in enumerate(layers):
        z = []
        for j in range(len(b)):
            s = b[j]
            for i in range(len(a)):
                s += a[i] * w[i][j]
            z.append(s)
        a = z if li == len(layers) - 1 else [v if v > 0 else 0.0 for v in z]
    return a


def unpack_layers(values, shapes):
    layers = []
    off = 0
    for fan_in, fan_out in shapes:
        w = [[values[off + i * fan_out + j] for j in range(fan_out)] for i in range(fan_in)]
        off += fan_in * fan_out
        b = [values[off + j] for j in range(fan_out)]
        off += fan_out
        layers.append((w, b))
    return layers


def scalar_loss(values, shapes, features, labels):
    layers = unpack_layers([float(v) for v in values], shapes)
    total = 0.0
    for x, y in zip(features, labels):
        z = scalar_logits(layers, [float(v) for v in x])
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        total += lse - z[int(y)]
    return total / len(labels)


def scalar_train_logistic(features, labels, num_classes, eta, steps):
    """Full-batch gradient descent for multinomial logistic regression, in loops."""
    d = len(features[0])
    w = [[0.0] * num_classes for _ in range(d)]
    b = [0.0] * num_classes
    n = len(labels)
    for _ in range(steps):
        gw = [[0.0] * num_classes for _ in range(d)]
        gb = [0.0] * num_classes
        for x, y in zip(features, labels):
            z = [b[j] + sum(x[i] * w[i][j] for i in range(d)) for j in range(num_classes)]
            m = max(z)
            e = [math.exp(v - m) for v in z]
            s = sum(e)
            for j in range(num_classes):
                r = e[j] / s - (1.0 if j == y else 0.0)
                gb[j] += r / n
                for i in range(d):
                    gw[i][j] += r * x[i] / n
        for j in range(num_classes):
            b[j] -= eta * gb[j]
            for i in range(d):
                w[i][j] -= eta * gw[i][j]
    flat = []
    for i in range(d):
        flat.extend(w[i])
    flat.extend(b)
    return flat


def _cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return max(-1.0, min(1.0, dot / (na * nb)))


def brute_force_agglomerative(reps, tau):
    """Centroid-direction agglomeration recomputed from scratch at every step.

    ``reps``: dict id -> vector (list of floats). Returns a dict
    survivor id -> frozenset of member ids. Clusters are compared by the
    cosine of their summed member vectors; the best pair (ties: smallest
    (i, j)) is merged while its similarity is strictly above ``tau``.
    """
    clusters = {k: {k} for k in reps}
    while len(clusters) > 1:
        best = None
        for i, j in combinations(sorted(clusters), 2):
            si = [sum(reps[c][t] for c in clusters[i]) for t in range(len(reps[i]))]
            sj = [sum(reps[c][t] for c in clusters[j]) for t in range(len(reps[j]))]
            s = _cos(si, sj)
            if best is None or s > best[0]:
                best = (s, i, j)
        s, i, j = best
        if not s > tau:
            break
        clusters[i] |= clusters.pop(j)
    return {k: frozenset(v) for k, v in clusters.items()}


def brute_force_ari(pred, truth):
    """ARI from explicit enumeration of all sample pairs."""
    n = len(pred)
    a = b = c = d = 0
    for i, j in combinations(range(n), 2):
        same_p = pred[i] == pred[j]
        same_t = truth[i] == truth[j]
        if same_p and same_t:
            a += 1
        elif same_p:
            b += 1
        elif same_t:
            c += 1
        else:
            d += 1
    total = a + b + c + d
    expected = (a + b) * (a + c) / total
    maximum = ((a + b) + (a + c)) / 2
    if maximum == expected:
        return 1.0
    return (a - expected) / (maximum - expected)
