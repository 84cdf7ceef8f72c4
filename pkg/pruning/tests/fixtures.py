"""Synthetic datasets shared by the test modules."""
import numpy as np

from pruning.allocation import AllocationProblem, solve
from pruning.embed_store import EmbeddingMatrix


def unit_rows(values):
    data = np.asarray(values, dtype=np.float64)
    data = data / np.linalg.norm(data, axis=1, keepdims=True)
    return EmbeddingMatrix(data, normalized=True)


def random_unit(rng, n, dim):
    data = rng.standard_normal((n, dim))
    return data / np.linalg.norm(data, axis=1, keepdims=True)


def duplicated_pairs(n_pairs=40, dim=64, seed=0):
    """Every base vector appears twice, as rows 2i and 2i + 1."""
    rng = np.random.default_rng(seed)
    base = random_unit(rng, n_pairs, dim)
    return EmbeddingMatrix(np.repeat(base, 2, axis=0), normalized=True)


def graded_pairs(n_pairs=60, dim=256, seed=0, low=0.5, high=0.99):
    """Pairs whose within-pair similarity rises from low to high; pairs are nearly orthogonal."""
    rng = np.random.default_rng(seed)
    rows = []
    for i, s in enumerate(np.linspace(low, high, n_pairs)):
        u, v = random_unit(rng, 2, dim)
        v = v - (v @ u) * u
        v /= np.linalg.norm(v)
        rows.append(u)
        rows.append(s * u + np.sqrt(1.0 - s * s) * v)
    return EmbeddingMatrix(np.asarray(rows), normalized=True)


def random_problem(rng, k):
    """A random feasible allocation problem with integer bounds."""
    ub = rng.integers(1, 60, size=k)
    lb = np.minimum(ub, rng.integers(1, 4, size=k))
    N = int(rng.integers(lb.sum(), ub.sum() + 1))
    q = rng.random(k) * 1.5 * N / k + rng.normal(0.0, 2.0, size=k)
    return AllocationProblem(q=q, lb=lb, ub=ub, N=N)


def feasible_points(rng, prob, count):
    """Random points of the feasible set: projections of random box points onto sum(x) = N."""
    points = []
    for _ in range(count):
        box = prob.lb + rng.random(prob.k) * (prob.ub - prob.lb)
        points.append(solve(AllocationProblem(q=box, lb=prob.lb, ub=prob.ub, N=prob.N)).x_real)
    return points


def purity(predicted, labels):
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    total = 0
    for cluster in np.unique(predicted):
        total += np.bincount(labels[predicted == cluster]).max()
    return total / labels.size
