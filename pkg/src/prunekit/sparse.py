"""Compressed sparse row inference for pruned networks.

Setting pruned weights to zero saves neither storage nor multiplications;
CSR stores exactly the surviving weights (one value per mask 1-entry) and
reproduces the masked dense forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DenseNet, ShapeError, _activate
from .pruning import PruneMask


@dataclass
class CsrLayer:
    shape: tuple[int, int]
    row_ptr: np.ndarray  # int64, len rows + 1
    col_idx: np.ndarray  # int64, len nnz
    values: np.ndarray  # float64, len nnz
    bias: np.ndarray
    activation: str

    @property
    def nnz(self) -> int:
        return int(self.values.size)


@dataclass
class CsrNetwork:
    layers: list[CsrLayer]
    input_dim: int


def to_csr(net: DenseNet, mask: PruneMask) -> CsrNetwork:
    """Keep exactly the mask's surviving entries (even those whose trained
    value happens to be zero), row-major within each row."""
    if len(mask.layers) != len(net.layers):
        raise ShapeError("mask layer count does not match network")
    layers = []
    for layer, m in zip(net.layers, mask.layers):
        if m.shape != layer.weights.shape:
            raise ShapeError("mask shape does not match layer weights")
        rows, cols = np.nonzero(m)
        row_ptr = np.zeros(layer.out_dim + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        row_ptr = np.cumsum(row_ptr)
        layers.append(
            CsrLayer(
                shape=layer.weights.shape,
                row_ptr=row_ptr,
                col_idx=cols.astype(np.int64),
                values=layer.weights[rows, cols].copy(),
                bias=layer.bias.copy(),
                activation=layer.activation,
            )
        )
    return CsrNetwork(layers, net.input_dim)


def csr_forward(net: CsrNetwork, x) -> np.ndarray:
    """Posterior vector for one input, computed purely from the CSR storage."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (net.input_dim,):
        raise ShapeError(f"input has shape {a.shape}, expected ({net.input_dim},)")
    for layer in net.layers:
        z = layer.bias.copy()
        gathered = layer.values * a[layer.col_idx]
        for row in range(layer.shape[0]):
            start, end = layer.row_ptr[row], layer.row_ptr[row + 1]
            if end > start:
                z[row] += gathered[start:end].sum()
        a = _activate(layer.activation, z)
    return a
