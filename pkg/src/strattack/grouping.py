"""Sliding-mask pixel groups and the group-sparsity penalty.

Images and perturbations are numpy arrays of shape ``(H, W, C)``.  The flat
index of pixel ``(h, w, c)`` is ``(h * W + w) * C + c``, i.e. plain C-order
``ravel``.  A mask of size ``r x r x C`` slides with stride ``S``; window
``(p, q)`` covers columns ``[p*S, p*S + r)`` and rows ``[q*S, q*S + r)`` and is
stored at position ``q * P + p`` of the group list.  Groups are disjoint
exactly when ``S == r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class Dims:
    width: int
    height: int
    channels: int = 1

    def __post_init__(self):
        for name in ("width", "height", "channels"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DimensionError(f"{name} must be a positive integer, got {value!r}")

    @property
    def n(self) -> int:
        return self.width * self.height * self.channels

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(H, W, C)`` used for every image-like tensor."""
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class GroupSpec:
    """Immutable group decomposition produced by :func:`make_groups`.

    ``index`` is a ``(P*Q, r*r*C)`` integer array whose rows are the sorted
    flat indices of each group; ``groups`` exposes the same rows as a tuple.
    """

    dims: Dims
    r: int
    stride: int
    P: int
    Q: int
    index: np.ndarray = field(repr=False)
    overlapping: bool = False

    @property
    def num_groups(self) -> int:
        return self.P * self.Q

    @property
    def group_size(self) -> int:
        return self.index.shape[1]

    @property
    def groups(self) -> tuple[np.ndarray, ...]:
        return tuple(self.index)

    def membership_counts(self) -> np.ndarray:
        """Number of groups each flat index belongs to."""
        return np.bincount(self.index.ravel(), minlength=self.dims.n)


def _anchors(extent: int, r: int, stride: int, snap: bool) -> np.ndarray:
    starts = np.arange(0, extent - r + 1, stride)
    if snap and starts[-1] != extent - r:
        starts = np.append(starts, extent - r)
    return starts


def make_groups(dims: Dims, r: int, stride: int, edge: str = "error") -> GroupSpec:
    """Build the groups of an ``r x r x C`` mask slid with the given stride.

    With ``edge="error"`` (default) ``(W - r)`` and ``(H - r)`` must be
    multiples of ``stride``.  ``edge="snap"`` instead appends one extra
    window flush with the right/bottom border wherever the stride does not
    land there exactly, so every group keeps its full size and the groups
    still cover the image.
    """
    W, H, C = dims.width, dims.height, dims.channels
    if edge not in ("error", "snap"):
        raise ValueError(f"edge must be 'error' or 'snap', got {edge!r}")
    if not 1 <= r <= min(W, H):
        raise DimensionError(f"mask size r={r} must lie in [1, {min(W, H)}]")
    if not 1 <= stride <= r:
        raise DimensionError(f"stride S={stride} must lie in [1, r={r}]")
    if edge == "error" and ((W - r) % stride or (H - r) % stride):
        raise DimensionError(
            f"(W-r, H-r) = ({W - r}, {H - r}) not divisible by stride {stride}"
        )
    cols = _anchors(W, r, stride, edge == "snap")
    rows = _anchors(H, r, stride, edge == "snap")

    # offsets of one window anchored at the origin, already in sorted order
    hh, ww, cc = np.meshgrid(np.arange(r), np.arange(r), np.arange(C), indexing="ij")
    offsets = ((hh * W + ww) * C + cc).ravel()
    top, left = np.meshgrid(rows, cols, indexing="ij")
    anchors = ((top * W + left) * C).ravel()
    index = anchors[:, None] + offsets[None, :]
    index.setflags(write=False)
    overlapping = stride != r or index.size != len(np.unique(index))
    return GroupSpec(dims=dims, r=r, stride=stride, P=len(cols), Q=len(rows), index=index,
                     overlapping=overlapping)


def _flat(delta, dims: Dims) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != dims.shape:
        raise DimensionError(f"expected shape {dims.shape}, got {delta.shape}")
    return delta.reshape(-1)


def group_norms(delta, spec: GroupSpec) -> np.ndarray:
    """Euclidean norm of ``delta`` restricted to each group, in group order."""
    flat = _flat(delta, spec.dims)
    return np.sqrt(np.sum(flat[spec.index] ** 2, axis=1))


def group_sparsity(delta, spec: GroupSpec) -> float:
    """Sum of per-group Euclidean norms."""
    return float(np.sum(group_norms(delta, spec)))


def count_nonzero_groups(delta, spec: GroupSpec, tol: float = 0.0) -> int:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return int(np.count_nonzero(group_norms(delta, spec) > tol))
