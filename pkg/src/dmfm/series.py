from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MatrixSeries:
    """``T`` observations of ``p1 x p2`` matrices, with an optional mask.

    ``mask[t, i, j]`` is True when ``Y[t, i, j]`` is observed. Masked
    entries of ``Y`` may hold anything (NaN included); they are never read.
    """

    Y: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim != 3:
            raise ValueError(f"expected a (T, p1, p2) array, got shape {Y.shape}")
        object.__setattr__(self, "Y", Y)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != Y.shape:
                raise ValueError(f"mask shape {mask.shape} != data shape {Y.shape}")
            if mask.all():
                mask = None
            object.__setattr__(self, "mask", mask)
        observed = Y if self.mask is None else Y[self.mask]
        if not np.all(np.isfinite(observed)):
            raise ValueError("observed entries must be finite")

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def p1(self) -> int:
        return self.Y.shape[1]

    @property
    def p2(self) -> int:
        return self.Y.shape[2]

    @property
    def has_missing(self) -> bool:
        return self.mask is not None

    def weights(self) -> np.ndarray:
        """Float 0/1 observation indicator, all ones when nothing is missing."""
        if self.mask is None:
            return np.ones_like(self.Y)
        return self.mask.astype(float)

    def filled(self, value: float = 0.0) -> np.ndarray:
        """Data with masked cells replaced by ``value``."""
        if self.mask is None:
            return self.Y
        return np.where(self.mask, self.Y, value)

    def subpanel(self, rows: np.ndarray, cols: np.ndarray) -> "MatrixSeries":
        Y = self.Y[:, rows][:, :, cols]
        mask = None if self.mask is None else self.mask[:, rows][:, :, cols]
        return MatrixSeries(Y, mask)


def to_vec_series(Y: np.ndarray) -> np.ndarray:
    """Column-major vectorization of every ``Y[t]``: shape ``(T, p1*p2)``."""
    T = Y.shape[0]
    return np.swapaxes(Y, 1, 2).reshape(T, -1)


def from_vec_series(v: np.ndarray, p1: int, p2: int) -> np.ndarray:
    T = v.shape[0]
    return np.swapaxes(v.reshape(T, p2, p1), 1, 2)
