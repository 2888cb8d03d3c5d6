"""Slow scalar-loop reference implementations for checking the tensor losses.

Nothing here imports from the losses or model modules; inputs are plain
nested sequences (or arrays, converted with ``tolist``).
"""

from __future__ import annotations

import math


def _rows(m):
    m = m.tolist() if hasattr(m, "tolist") else m
    return [[float(v) for v in row] for row in m]


def _matmul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    out = []
    for i in range(n):
        if len(a[i]) != k:
            raise ValueError("inner dimensions disagree")
        row = []
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i][p] * b[p][j]
            row.append(acc)
        out.append(row)
    return out


def morphology_loss_reference(student_patches, teacher_patches, adapter_weights, tau):
    s = _rows(student_patches)
    t = _matmul(_rows(teacher_patches), _rows(adapter_weights))
    n = len(s)
    if n < 2 or len(t) != n:
        raise ValueError("need N >= 2 matching rows")
    if tau <= 0:
        raise ValueError("tau must be > 0")

    def unit(row):
        norm = math.sqrt(sum(v * v for v in row))
        if norm == 0.0:
            raise ValueError("zero-norm row")
        return [v / norm for v in row]

    s = [unit(r) for r in s]
    t = [unit(r) for r in t]
    total = 0.0
    for i in range(n):
        z = []
        for j in range(n):
            dot = 0.0
            for k in range(len(s[i])):
                dot += s[i][k] * t[j][k]
            z.append(dot / tau)
        top = max(z)
        denom = 0.0
        for v in z:
            denom += math.exp(v - top)
        total += -(z[i] - top - math.log(denom))
    return total / n


def _distance_matrix(x):
    n = len(x)
    d = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                acc = 0.0
                for k in range(len(x[i])):
                    diff = x[i][k] - x[j][k]
                    acc += diff * diff
                d[i][j] = math.sqrt(acc)
    return d


def rhythm_loss_reference(student_patches, teacher_patches, adapter_weights, smooth_l1_beta):
    s = _rows(student_patches)
    t = _matmul(_rows(teacher_patches), _rows(adapter_weights))
    n = len(s)
    if n < 2 or len(t) != n:
        raise ValueError("need N >= 2 matching rows")
    ds, dt = _distance_matrix(s), _distance_matrix(t)
    pairs = n * (n - 1)
    mean_s = sum(ds[i][j] for i in range(n) for j in range(n) if i != j) / pairs
    mean_t = sum(dt[i][j] for i in range(n) for j in range(n) if i != j) / pairs
    if mean_s == 0.0 or mean_t == 0.0:
        raise ValueError("degenerate structure: all rows identical")
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            r = abs(ds[i][j] / mean_s - dt[i][j] / mean_t)
            if r < smooth_l1_beta:
                total += 0.5 * r * r / smooth_l1_beta
            else:
                total += r - 0.5 * smooth_l1_beta
    return total / pairs


def finite_difference_grad(loss_fn, point, step=1e-5):
    """Central-difference gradient of ``loss_fn`` at ``point``.

    ``point`` may be a scalar, a 1-D or a 2-D sequence (arrays are converted
    with ``tolist``); ``loss_fn`` is called with the same nesting and the
    gradient comes back in that shape.
    """
    if step <= 0:
        raise ValueError("step must be > 0")

    def call(x):
        value = float(loss_fn(x))
        if not math.isfinite(value):
            raise ValueError(f"non-finite loss {value} during finite differencing")
        return value

    if hasattr(point, "tolist"):
        point = point.tolist()
    if not isinstance(point, (list, tuple)):
        x = float(point)
        return (call(x + step) - call(x - step)) / (2 * step)
    if point and isinstance(point[0], (list, tuple)):
        x = _rows(point)
        grad = [[0.0] * len(row) for row in x]
        for i, row in enumerate(x):
            for j, v in enumerate(row):
                row[j] = v + step
                f_plus = call(x)
                row[j] = v - step
                f_minus = call(x)
                row[j] = v
                grad[i][j] = (f_plus - f_minus) / (2 * step)
        return grad
    x = [float(v) for v in point]
    grad = [0.0] * len(x)
    for j, v in enumerate(x):
        x[j] = v + step
        f_plus = call(x)
        x[j] = v - step
        f_minus = call(x)
        x[j] = v
        grad[j] = (f_plus - f_minus) / (2 * step)
    return grad
