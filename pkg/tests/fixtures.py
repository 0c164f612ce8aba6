"""Deterministic evaluation fixtures shared by the metric and acceptance tests."""

import numpy as np

R2 = np.sqrt(2.0) / 2.0


def metric_fixture(n_samples=20, seed=7):
    """``n_samples`` small samples: (sample_id, rounds, ground_truth) with K=3, M=4, d=3.

    Hypotheses are ground-truth events plus noise of varying size, a few
    exact repeats, and vectors pointing away from every event (every
    fourth sample holds only those), so the
    thresholds and duplicate filter all see both outcomes.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for n in range(n_samples):
        n_gt = int(rng.integers(1, 4))
        gt = rng.standard_normal((n_gt, 3))
        rounds = []
        for _ in range(3):
            rows = []
            for _ in range(4):
                kind = 4 if n % 4 == 3 else rng.integers(0, 4)
                if kind == 0:
                    rows.append(gt[rng.integers(n_gt)] + 0.15 * rng.standard_normal(3))
                elif kind == 1:
                    rows.append(gt[rng.integers(n_gt)] + 0.8 * rng.standard_normal(3))
                elif kind == 2 and rounds:
                    rows.append(rounds[-1][rng.integers(4)].copy())
                elif kind == 4:
                    rows.append(-gt.sum(axis=0) + 0.3 * rng.standard_normal(3))
                else:
                    rows.append(rng.standard_normal(3))
            rounds.append(np.array(rows))
        samples.append((f"s{n:02d}", rounds, gt))
    return samples
