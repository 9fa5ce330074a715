"""Freezes silhouette, Jensen-Shannon and Kendall tau reference values."""
import json
import sys

import numpy as np
from scipy.spatial.distance import jensenshannon
from scipy.stats import kendalltau
from sklearn.metrics import silhouette_samples

rng = np.random.default_rng(20240601)
out = {"silhouette": [], "jensen_shannon": [], "kendall": []}

for case in range(100):
    n = 10
    pts = rng.normal(size=(n, 3))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    k = int(rng.integers(2, 5))
    while True:
        labels = rng.integers(0, k, size=n)
        if len(set(labels.tolist())) >= 2:
            break
    s = silhouette_samples(d, labels, metric="precomputed")
    out["silhouette"].append({"distances": d.tolist(), "labels": labels.tolist(), "samples": s.tolist()})

for case in range(100):
    n = int(rng.integers(2, 40))
    p = rng.dirichlet(np.full(n, 0.5))
    q = rng.dirichlet(np.full(n, 0.5))
    if case % 5 == 0:
        p[rng.integers(0, n)] = 0.0
        p /= p.sum()
    out["jensen_shannon"].append({"p": p.tolist(), "q": q.tolist(), "distance": float(jensenshannon(p, q, base=2))})

for case in range(100):
    n = int(rng.integers(3, 25))
    if case % 3 == 0:
        n = int(rng.integers(3, 11)) if case % 2 == 0 else n
        x = rng.permutation(n).astype(float)
        y = rng.permutation(n).astype(float)
    else:
        x = rng.integers(0, max(2, n // 2), size=n).astype(float)
        y = rng.integers(0, max(2, n // 3), size=n).astype(float)
    if np.all(x == x[0]) or np.all(y == y[0]):
        x[0], y[0] = x[0] + 1, y[0] + 1
    ties = len(set(x.tolist())) < n or len(set(y.tolist())) < n
    method = "exact" if (n <= 10 and not ties) else "asymptotic"
    res = kendalltau(x, y, variant="b", method=method)
    out["kendall"].append({"x": x.tolist(), "y": y.tolist(), "tau": float(res.statistic),
                           "p_value": float(res.pvalue), "exact": method == "exact"})

json.dump(out, open(sys.argv[1], "w"), indent=1)
