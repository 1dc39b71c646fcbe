"""Regenerate the frozen reference values used by the Rust test suites.

HDBSCAN partitions come from scikit-learn's HDBSCAN building blocks (brute
mutual reachability, Prim MST, single linkage, EOM selection without the
single-cluster option). Stock scikit-learn orders tied MST edges with an
unstable argsort, so `labels` re-sorts the MST by (weight, smaller index,
larger index) before building the hierarchy; `sklearn_labels` keeps the
stock output for comparison. Welch t-test values come from scipy.stats.
Run from the repository root:

    python3 scripts/gen_reference_fixtures.py
"""
import json

import numpy as np
from scipy import stats
from sklearn.cluster import HDBSCAN
from sklearn.cluster._hdbscan._linkage import (
    make_single_linkage,
    mst_from_mutual_reachability,
)
from sklearn.cluster._hdbscan._reachability import mutual_reachability_graph
from sklearn.cluster._hdbscan._tree import tree_to_labels
from sklearn.metrics import pairwise_distances
from sklearn.datasets import make_blobs

OUT = "crates/core/tests/fixtures"


def hdbscan_tie_ordered(x, min_cluster_size, min_samples):
    mr = mutual_reachability_graph(pairwise_distances(x), min_samples=min_samples)
    mst = mst_from_mutual_reachability(mr)
    lo = np.minimum(mst["current_node"], mst["next_node"])
    hi = np.maximum(mst["current_node"], mst["next_node"])
    order = np.lexsort((hi, lo, mst["distance"]))
    labels, _ = tree_to_labels(
        make_single_linkage(mst[order]),
        min_cluster_size=min_cluster_size,
        cluster_selection_method="eom",
        allow_single_cluster=False,
    )
    return labels


def hdbscan_cases():
    cases = []
    rng = np.random.default_rng(20240611)
    for seed in range(24):
        n = int(rng.integers(30, 201))
        dims = int(rng.integers(2, 17))
        centers = int(rng.integers(2, 6))
        std = float(rng.uniform(0.3, 1.5))
        x, _ = make_blobs(
            n_samples=n - n // 10,
            n_features=dims,
            centers=centers,
            cluster_std=std,
            center_box=(-10.0, 10.0),
            random_state=seed,
        )
        noise = np.random.default_rng(seed).uniform(-12.0, 12.0, size=(n // 10, dims))
        x = np.vstack([x, noise])
        mcs = int(rng.integers(3, 11))
        ms = int(rng.integers(1, mcs + 1))
        stock = HDBSCAN(
            min_cluster_size=mcs, min_samples=ms, algorithm="brute"
        ).fit_predict(x)
        labels = hdbscan_tie_ordered(x, mcs, ms)
        cases.append(
            {
                "seed": seed,
                "min_cluster_size": mcs,
                "min_samples": ms,
                "points": [[float(v) for v in row] for row in x],
                "labels": [int(v) for v in labels],
                "sklearn_labels": [int(v) for v in stock],
            }
        )
    return cases


def welch_cases():
    rng = np.random.default_rng(7)
    cases = []
    for i in range(10):
        nx = int(rng.integers(2, 40))
        ny = int(rng.integers(2, 40))
        xs = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 3), nx)
        ys = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 3), ny)
        xs = [round(float(v), 6) for v in xs]
        ys = [round(float(v), 6) for v in ys]
        res = stats.ttest_ind(xs, ys, equal_var=False)
        vx, vy = np.var(xs, ddof=1) / nx, np.var(ys, ddof=1) / ny
        df = (vx + vy) ** 2 / (vx**2 / (nx - 1) + vy**2 / (ny - 1))
        cases.append(
            {"xs": xs, "ys": ys, "t": float(res.statistic), "df": float(df), "p": float(res.pvalue)}
        )
    summary = []
    for a, b in [
        ((1.0, 0.5, 10), (0.0, 0.5, 10)),
        ((0.51, 0.36, 80), (0.41, 0.31, 172)),
        ((3.2, 1.1, 5), (2.0, 2.7, 31)),
    ]:
        res = stats.ttest_ind_from_stats(*a, *b, equal_var=False)
        va, vb = a[1] ** 2 / a[2], b[1] ** 2 / b[2]
        df = (va + vb) ** 2 / (va**2 / (a[2] - 1) + vb**2 / (b[2] - 1))
        summary.append(
            {"a": list(a), "b": list(b), "t": float(res.statistic), "df": float(df), "p": float(res.pvalue)}
        )
    return {"samples": cases, "summaries": summary}


if __name__ == "__main__":
    with open(f"{OUT}/hdbscan_reference.json", "w") as f:
        json.dump(hdbscan_cases(), f)
    with open(f"{OUT}/welch_reference.json", "w") as f:
        json.dump(welch_cases(), f, indent=1)
