"""Property suites behind the `verify` command.

Each suite returns PropertyResult records; a failing record carries a
minimal counterexample (the case parameters plus the first mismatch) so a
failure can be reproduced directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .grad_check import grad_check_svga, random_block_weights
from .knn import adjacency_from_fixed_graph, knn_graph, mrconv_knn
from .svga import build_fixed_offsets, mrconv_gather_oracle, mrconv_roll, svga_block_forward
from .tensor_core import Array, ConvBn, ConvSpec, roll_2d

ORACLE_DIMS = (1, 2, 4, 7, 8, 14)
ORACLE_KS = (1, 2, 3, 5)
ORACLE_CHANNELS = (1, 3, 16)
ORACLE_SEEDS = 100

EQUIVARIANCE_GRIDS = ((8, 8), (7, 7))
EQUIVARIANCE_SEEDS = 20
EQUIVARIANCE_CHANNELS = 16

GRAD_TOL = 1e-4
GRAD_LINEAR_TOL = 1e-8

KNN_SEEDS = 50
KNN_GRIDS = ((3, 3), (4, 4), (5, 7), (8, 8), (9, 3), (16, 16))


@dataclass
class PropertyResult:
    name: str
    ok: bool
    detail: str
    counterexample: dict = field(default_factory=dict)


def _random_proj(rng: np.random.Generator, in_c: int, out_c: int) -> ConvBn:
    spec = ConvSpec(in_c, out_c, (1, 1))
    return ConvBn(
        spec=spec,
        weight=rng.normal(0.0, 0.4, size=spec.weight_shape()).astype(np.float32),
        bias=rng.normal(0.0, 0.1, size=out_c).astype(np.float32),
        gamma=rng.uniform(0.7, 1.3, size=out_c).astype(np.float32),
        beta=rng.normal(0.0, 0.1, size=out_c).astype(np.float32),
        mean=rng.normal(0.0, 0.1, size=out_c).astype(np.float32),
        var=rng.uniform(0.5, 1.5, size=out_c).astype(np.float32),
    )


def _first_mismatch(a: Array, b: Array) -> dict:
    where = np.argwhere(a != b)
    idx = tuple(int(v) for v in where[0])
    return {"index": idx, "lhs": float(a[idx]), "rhs": float(b[idx]),
            "mismatches": int(where.shape[0])}


def run_oracle_suite(seed: int = 0, seeds_per_case: int = ORACLE_SEEDS) -> PropertyResult:
    """Roll-based aggregation vs explicit gather, bitwise, over a dim/k/c grid."""
    cases = 0
    for h in ORACLE_DIMS:
        for w in ORACLE_DIMS:
            for k in ORACLE_KS:
                for c in ORACLE_CHANNELS:
                    graph = build_fixed_offsets(h, w, k)
                    proj = _random_proj(np.random.default_rng([seed, h, w, k, c]), 2 * c, c)
                    x = np.stack([
                        np.random.default_rng([seed, h, w, k, c, s])
                        .standard_normal((c, h, w)).astype(np.float32)
                        for s in range(seeds_per_case)
                    ])
                    got = mrconv_roll(x, k, proj)
                    want = mrconv_gather_oracle(x, graph, proj)
                    cases += 1
                    if not np.array_equal(got, want):
                        ce = {"h": h, "w": w, "k": k, "c": c, "seed": seed}
                        ce.update(_first_mismatch(got, want))
                        return PropertyResult(
                            "oracle-equivalence", False,
                            f"mismatch at h={h} w={w} k={k} c={c}", ce)
    return PropertyResult(
        "oracle-equivalence", True,
        f"{cases} (h,w,k,c) cases x {seeds_per_case} seeds, all bitwise equal")


def run_equivariance_suite(seed: int = 0,
                           weight_seeds: int = EQUIVARIANCE_SEEDS) -> PropertyResult:
    """svga_block_forward commutes with every circular shift, bitwise."""
    c = EQUIVARIANCE_CHANNELS
    checked = 0
    for h, w in EQUIVARIANCE_GRIDS:
        for s in range(weight_seeds):
            rng = np.random.default_rng([seed, h, w, s])
            weights = random_block_weights(c, 2, rng, dtype=np.float32)
            x = rng.standard_normal((1, c, h, w)).astype(np.float32)
            base = svga_block_forward(x, weights)
            for d in range(h):
                for e in range(w):
                    lhs = svga_block_forward(roll_2d(x, d, e), weights)
                    rhs = roll_2d(base, d, e)
                    checked += 1
                    if not np.array_equal(lhs, rhs):
                        ce = {"h": h, "w": w, "c": c, "weight_seed": s,
                              "shift": [d, e], "seed": seed}
                        ce.update(_first_mismatch(lhs, rhs))
                        return PropertyResult(
                            "translation-equivariance", False,
                            f"shift ({d},{e}) broke equivariance on {h}x{w}", ce)
    return PropertyResult(
        "translation-equivariance", True,
        f"{checked} shift checks across {weight_seeds} weight seeds, all bitwise")


def run_grad_suite(seed: int = 0) -> PropertyResult:
    """Analytic vs finite-difference gradients through a full SVGA block."""
    results = []
    for shape, k in (((1, 4, 4, 4), 2), ((1, 2, 3, 5), 2), ((1, 4, 4, 4), 3)):
        err = grad_check_svga(shape, k, seed)
        results.append((f"full block {shape} k={k}", err, GRAD_TOL))
    lin_err = grad_check_svga((1, 4, 4, 4), 2, seed, identity_act=True)
    results.append(("linear subnet (identity activation)", lin_err, GRAD_LINEAR_TOL))
    worst = max(results, key=lambda r: r[1] / r[2])
    detail = "; ".join(f"{name}: {err:.3g}" for name, err, _ in results)
    if any(err >= tol for _, err, tol in results):
        name, err, tol = worst
        return PropertyResult("gradient-check", False,
                              f"{name} error {err:.3g} >= {tol:g}",
                              {"case": name, "error": err, "tol": tol, "seed": seed})
    return PropertyResult("gradient-check", True, detail)


def knn_brute_force(features: Array, k: int) -> Array:
    """Scalar O(n^2) nearest-neighbor reference with explicit tie-breaks."""
    f = [[float(v) for v in row] for row in np.asarray(features, dtype=np.float64)]
    n = len(f)
    nc = len(f[0])
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        ranked = []
        fi = f[i]
        for j in range(n):
            if j == i:
                continue
            fj = f[j]
            s = 0.0
            for ch in range(nc):
                d = fi[ch] - fj[ch]
                s += d * d
            ranked.append((s, j))
        ranked.sort()
        out[i] = [j for _, j in ranked[:k]]
    return out


def run_knn_suite(seed: int = 0, seeds: int = KNN_SEEDS) -> PropertyResult:
    """knn_graph vs the scalar brute force, plus the fixed-adjacency bridge
    to the gather oracle and a graph-construction cost sanity bound."""
    for s in range(seeds):
        h, w = KNN_GRIDS[s % len(KNN_GRIDS)]
        c = (1, 3, 4)[s % 3]
        k = min(1 + s % 8, h * w - 1)
        rng = np.random.default_rng([seed, s])
        x = rng.standard_normal((1, c, h, w)).astype(np.float32)
        if s % 5 == 0:
            # force distance ties: a few duplicated feature columns
            flat = x.reshape(c, h * w)
            flat[:, : min(3, h * w)] = flat[:, :1]
        adj = knn_graph(x, k)
        feats = x.transpose(0, 2, 3, 1).reshape(h * w, c)
        ref = knn_brute_force(feats, k)
        if not np.array_equal(adj.neighbor_idx[0], ref):
            bad = np.argwhere(adj.neighbor_idx[0] != ref)[0]
            return PropertyResult(
                "knn-brute-force", False,
                f"neighbor mismatch at case {s} (grid {h}x{w}, c={c}, k={k})",
                {"case_seed": s, "h": h, "w": w, "c": c, "k": k,
                 "node": int(bad[0]), "slot": int(bad[1]),
                 "got": int(adj.neighbor_idx[0][bad[0], bad[1]]),
                 "want": int(ref[bad[0], bad[1]]), "seed": seed})

    for h, w, k in ((4, 4, 2), (7, 7, 2), (8, 8, 3)):
        rng = np.random.default_rng([seed, h, w, k])
        c = 3
        x = rng.standard_normal((2, c, h, w)).astype(np.float32)
        graph = build_fixed_offsets(h, w, k)
        proj = _random_proj(rng, 2 * c, c)
        via_adj = mrconv_knn(x, adjacency_from_fixed_graph(graph, 2), proj)
        via_gather = mrconv_gather_oracle(x, graph, proj)
        if not np.array_equal(via_adj, via_gather):
            ce = {"h": h, "w": w, "k": k, "seed": seed}
            ce.update(_first_mismatch(via_adj, via_gather))
            return PropertyResult(
                "knn-fixed-adjacency", False,
                f"adjacency path diverged from gather oracle at {h}x{w} k={k}", ce)

    ratio = _knn_cost_ratio(seed)
    if ratio <= 3.0:
        return PropertyResult(
            "knn-cost-growth", False,
            f"14x14 vs 7x7 graph construction ratio {ratio:.2f} <= 3",
            {"ratio": ratio, "seed": seed})
    return PropertyResult(
        "knn-graph", True,
        f"{seeds} brute-force cases exact; fixed-adjacency bitwise; "
        f"cost ratio {ratio:.1f}x")


def _median_time(fn, reps: int = 15) -> float:
    fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def _knn_cost_ratio(seed: int) -> float:
    rng = np.random.default_rng([seed, 14])
    c = 16
    small = rng.standard_normal((1, c, 7, 7)).astype(np.float32)
    big = rng.standard_normal((1, c, 14, 14)).astype(np.float32)
    t_small = _median_time(lambda: knn_graph(small, 9))
    t_big = _median_time(lambda: knn_graph(big, 9))
    return t_big / t_small


SUITES = {
    "oracle": run_oracle_suite,
    "equivariance": run_equivariance_suite,
    "grad": run_grad_suite,
    "knn": run_knn_suite,
}


def run_suites(names: list[str], seed: int = 0) -> list[PropertyResult]:
    return [SUITES[name](seed=seed) for name in names]
