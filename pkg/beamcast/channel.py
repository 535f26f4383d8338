# beamcast/channel.py

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ChannelError
from .log import get_logger
from .netgeom import NodeSet

logger = get_logger(__name__)

MATRIX_MAGIC = b"LOSM1"


@dataclass(frozen=True)
class ChannelMatrix:
    """LOS coefficients, row = receiver, column = transmitter."""

    entries: np.ndarray
    rx_indices: np.ndarray
    tx_indices: np.ndarray
    distances: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


def pair_distance(p: Sequence[float], q: Sequence[float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def los_coefficient(r: float) -> complex:
    """exp(2 pi i r) / r with wavelength and link constant equal to 1."""
    if not r > 0:
        raise ChannelError(f"LOS coefficient needs r > 0, got r = {r}")
    return complex(np.exp(2j * np.pi * math.fmod(r, 1.0)) / r)


def los_entries(distances: np.ndarray) -> np.ndarray:
    """Elementwise LOS coefficients; the phase is reduced mod 1 before exp."""
    return np.exp(2j * np.pi * np.mod(distances, 1.0)) / distances


def pairwise_distances(rx_points: np.ndarray, tx_points: np.ndarray) -> np.ndarray:
    return cdist(np.asarray(rx_points, dtype=float), np.asarray(tx_points, dtype=float))


def network_channel_matrix(nodes: NodeSet) -> ChannelMatrix:
    """Full n x n matrix with an exactly zero diagonal."""
    n = len(nodes)
    idx = np.arange(n)
    distances = pairwise_distances(nodes.positions, nodes.positions)
    off = ~np.eye(n, dtype=bool)

    if np.any(distances[off] == 0):
        j, k = np.argwhere((distances == 0) & off)[0]
        raise ChannelError(f"nodes {j} and {k} coincide; resample the placement")

    entries = np.zeros((n, n), dtype=np.complex128)
    entries[off] = los_entries(distances[off])
    return ChannelMatrix(entries=entries, rx_indices=idx, tx_indices=idx, distances=distances)


def intercluster_matrix(nodes: NodeSet, rx: Sequence[int], tx: Sequence[int]) -> ChannelMatrix:
    rx_idx = np.asarray(rx, dtype=np.int64)
    tx_idx = np.asarray(tx, dtype=np.int64)
    shared = np.intersect1d(rx_idx, tx_idx)
    if shared.size:
        raise ChannelError(f"rx and tx index sets overlap at node(s) {shared[:5].tolist()}")

    distances = pairwise_distances(nodes.positions[rx_idx], nodes.positions[tx_idx])
    if np.any(distances == 0):
        j, k = np.argwhere(distances == 0)[0]
        raise ChannelError(f"nodes {rx_idx[j]} and {tx_idx[k]} coincide")
    return ChannelMatrix(entries=los_entries(distances), rx_indices=rx_idx, tx_indices=tx_idx,
                         distances=distances)


def save_matrix(matrix: Union[ChannelMatrix, np.ndarray], path: Union[str, Path]) -> Path:
    """Writes ``LOSM1``, two little-endian uint64 dims, then row-major (re, im) float64 pairs."""
    entries = matrix.entries if isinstance(matrix, ChannelMatrix) else np.asarray(matrix)
    rows, cols = entries.shape
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(np.array([rows, cols], dtype="<u8").tobytes())
        f.write(np.ascontiguousarray(entries, dtype="<c16").tobytes())
    logger.info("✅ Channel matrix %dx%d written to %s", rows, cols, path)
    return path


def load_matrix(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as f:
        payload = f.read()
    if not payload.startswith(MATRIX_MAGIC):
        raise ChannelError(f"{path} is not an LOSM1 matrix dump")
    head = len(MATRIX_MAGIC)
    rows, cols = (int(v) for v in np.frombuffer(payload, dtype="<u8", count=2, offset=head))
    body = np.frombuffer(payload, dtype="<c16", offset=head + 16)
    if body.size != rows * cols:
        raise ChannelError(f"{path}: expected {rows * cols} entries, found {body.size}")
    return body.reshape(rows, cols).astype(np.complex128)
