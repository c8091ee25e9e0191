"""
Segment ops: reductions keyed by an integer segment id per row.

These are the aggregation primitives of message passing: a row per edge,
the id of the destination node as segment.
"""
import numpy as np

from beamx._autodiff.tensor import ShapeError, Tensor, as_tensor, record

SEGMENT_MODES = ("sum", "mean", "max")


def _check_ids(kind: str, segment_ids, num_rows: int, num_segments: int) -> np.ndarray:
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] != num_rows:
        raise ShapeError(f"{kind}: {ids.shape[0] if ids.ndim == 1 else ids.shape} segment ids for {num_rows} rows")
    if num_segments < 0:
        raise ShapeError(f"{kind}: negative num_segments {num_segments}")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ShapeError(
            f"{kind}: segment id out of range [0, {num_segments}): min {ids.min()}, max {ids.max()}"
        )
    return ids


def segment_reduce(values, segment_ids, num_segments: int, mode: str = "sum") -> Tensor:
    """
    Reduce the rows of values[M×d] per segment.

    Args:
        values: tensor of shape (M, d).
        segment_ids: integer array of length M, entries in [0, num_segments).
        num_segments: number of output rows.
        mode: "sum", "mean" or "max".

    Returns:
        Tensor of shape (num_segments, d). Empty segments give a zero row in
        every mode.
    """
    values = as_tensor(values)
    if values.data.ndim != 2:
        raise ShapeError(f"segment_reduce expects a 2-d tensor, got shape {values.shape}")
    if mode not in SEGMENT_MODES:
        raise ValueError(f"Unknown segment mode '{mode}'. Available modes: {SEGMENT_MODES}")
    ids = _check_ids("segment_reduce", segment_ids, values.shape[0], num_segments)
    d = values.shape[1]

    if mode in ("sum", "mean"):
        out = np.zeros((num_segments, d))
        np.add.at(out, ids, values.data)
        if mode == "sum":
            return record("segment_sum", out, (values,), lambda g: (g[ids],))
        counts = np.bincount(ids, minlength=num_segments).astype(np.float64)
        inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0).reshape(-1, 1)
        return record("segment_mean", out * inv, (values,), lambda g: ((g * inv)[ids],))

    # max: gradient goes to the first row attaining the maximum, per column
    out = np.full((num_segments, d), -np.inf)
    np.maximum.at(out, ids, values.data)
    empty = ~np.isfinite(out)
    out[empty] = 0.0
    m = values.shape[0]
    winners = values.data == out[ids]
    candidate = np.where(winners, np.arange(m).reshape(-1, 1), m)
    first = np.full((num_segments, d), m, dtype=np.int64)
    np.minimum.at(first, ids, candidate)

    def grad(g):
        grad_values = np.zeros(values.shape)
        seg, col = np.nonzero(first < m)
        np.add.at(grad_values, (first[seg, col], col), g[seg, col])
        return (grad_values,)

    return record("segment_max", out, (values,), grad)


def segment_softmax(scores, segment_ids, num_segments: int) -> Tensor:
    """
    Softmax of scores within each segment, computed as
    exp(score - segment max) / segment sum.

    Args:
        scores: tensor of shape (M,) or (M, 1).
        segment_ids: integer array of length M.
        num_segments: number of segments.

    Returns:
        Tensor with the shape of scores; each non-empty segment sums to 1.
    """
    scores = as_tensor(scores)
    flat = scores.data.reshape(-1)
    if scores.data.ndim == 2 and scores.shape[1] != 1 or scores.data.ndim > 2:
        raise ShapeError(f"segment_softmax expects shape (M,) or (M, 1), got {scores.shape}")
    ids = _check_ids("segment_softmax", segment_ids, flat.shape[0], num_segments)

    top = np.full(num_segments, -np.inf)
    np.maximum.at(top, ids, flat)
    e = np.exp(flat - top[ids])
    z = np.zeros(num_segments)
    np.add.at(z, ids, e)
    y = e / z[ids]

    def grad(g):
        g = np.asarray(g).reshape(-1)
        dot = np.zeros(num_segments)
        np.add.at(dot, ids, g * y)
        return ((y * (g - dot[ids])).reshape(scores.shape),)

    return record("segment_softmax", y.reshape(scores.shape), (scores,), grad)
