# beamcast/netgeom.py

import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy.special import xlogy

from .errors import GeometryError
from .log import get_logger
from .parallel import ordered_map
from .rng import Purpose, derive_rng
from .settings import SimulationConfig

logger = get_logger(__name__)

# Cell counts tolerate this much floating error before opening a partial cell.
GRID_SLACK = 1e-9


@dataclass(frozen=True)
class NodeSet:
    positions: np.ndarray  # (n, 2), read-only
    side: float
    config: SimulationConfig
    trial: int = 0

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.positions[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.positions[:, 1]


@dataclass(frozen=True)
class ClusterLayout:
    """Half-open grid of cells over the square.

    Cells are numbered row-major, row = floor(y / cell_height) and
    col = floor(x / cell_width). Cells that stick out past the side are kept
    and flagged in ``partial``.
    """

    cell_width: float
    cell_height: float
    cols: int
    rows: int
    side: float
    cell_of: np.ndarray
    cells: List[np.ndarray]
    counts: np.ndarray
    partial: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def cell_area(self) -> float:
        return self.cell_width * self.cell_height

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def row_col(self, cell: int) -> Tuple[int, int]:
        return divmod(cell, self.cols)

    def members(self, row: int, col: int) -> np.ndarray:
        return self.cells[self.index(row, col)]

    def center(self, cell: int) -> Tuple[float, float]:
        row, col = self.row_col(cell)
        return ((col + 0.5) * self.cell_width, (row + 0.5) * self.cell_height)

    def blocks(self) -> List[np.ndarray]:
        """Non-empty cells, in cell order, as a block partition."""
        return [c for c in self.cells if c.size]


@dataclass(frozen=True)
class ScheduledPair:
    pair_id: int
    row: int
    tx_cell: int  # partner cluster
    rx_cell: int  # served cluster, receives on the last hop
    tdma_round: int


@dataclass(frozen=True)
class PairSchedule:
    pairs: List[ScheduledPair]
    d: float
    vertical_gap: float
    n_pairs: int
    row_stride: int
    rounds: Dict[int, int]  # served cell -> TDMA round
    rounds_total: int
    layout: ClusterLayout = field(repr=False)

    def round_pairs(self, tdma_round: int) -> List[ScheduledPair]:
        return [p for p in self.pairs if p.tdma_round == tdma_round]

    @property
    def max_active_pairs(self) -> int:
        return max((len(self.round_pairs(r)) for r in range(self.rounds_total)), default=0)


@dataclass(frozen=True)
class DeviationReport:
    trials: int
    cells: int
    expected: float
    frequency: float
    upper_frequency: float
    lower_frequency: float
    bound: float
    upper_bound: float
    stderr: float

    @property
    def dominance_limit(self) -> float:
        return self.bound + 3 * self.stderr

    @property
    def dominated(self) -> bool:
        return self.frequency <= self.dominance_limit


def generate_network(config: SimulationConfig, trial: int = 0) -> NodeSet:
    """Places n nodes uniformly and independently on [0, L]^2.

    The stream is derived from (seed, trial), so the same pair always gives
    the same placement. Duplicate positions are redrawn from a second stream.
    """
    n = config.n
    side = config.side
    if n < 1:
        raise GeometryError("n must be at least 1")
    if not math.isfinite(side) or side <= 0:
        raise GeometryError(f"side length n^(nu/2) = {side} is not a positive finite number")

    positions = derive_rng(config.seed, trial, Purpose.PLACEMENT).uniform(0.0, side, size=(n, 2))

    resample = None
    while True:
        _, first, counts = np.unique(positions, axis=0, return_index=True, return_counts=True)
        if counts.max(initial=1) == 1:
            break
        dup = np.setdiff1d(np.arange(n), first)
        if resample is None:
            resample = derive_rng(config.seed, trial, Purpose.RESAMPLE)
        logger.warning("⚠️ Redrawing %d coincident node position(s)", dup.size)
        positions[dup] = resample.uniform(0.0, side, size=(dup.size, 2))

    positions.setflags(write=False)
    return NodeSet(positions=positions, side=side, config=config, trial=trial)


def _grid_count(side: float, size: float) -> int:
    return max(1, math.ceil(side / size - GRID_SLACK))


def partition_clusters(nodes: NodeSet, cell_width: float, cell_height: float) -> ClusterLayout:
    if not (cell_width > 0 and cell_height > 0):
        raise GeometryError(
            f"cell dimensions must be positive, got {cell_width} x {cell_height}")

    side = nodes.side
    cols = _grid_count(side, cell_width)
    rows = _grid_count(side, cell_height)
    col = np.minimum(np.floor(nodes.x / cell_width).astype(np.int64), cols - 1)
    row = np.minimum(np.floor(nodes.y / cell_height).astype(np.int64), rows - 1)
    cell_of = row * cols + col

    order = np.argsort(cell_of, kind="stable")
    counts = np.bincount(cell_of, minlength=rows * cols)
    cells = np.split(order, np.cumsum(counts)[:-1])

    wide = cols * cell_width > side * (1 + GRID_SLACK)
    tall = rows * cell_height > side * (1 + GRID_SLACK)
    partial = np.zeros((rows, cols), dtype=bool)
    if wide:
        partial[:, -1] = True
    if tall:
        partial[-1, :] = True

    cell_of.setflags(write=False)
    return ClusterLayout(cell_width=cell_width, cell_height=cell_height, cols=cols, rows=rows,
                         side=side, cell_of=cell_of, cells=cells, counts=counts,
                         partial=partial.ravel())


def scheme_layout(nodes: NodeSet) -> ClusterLayout:
    """Pair-scheme grid: four columns of length d, rows of height n^(nu/4)/(2 c1)."""
    cfg = nodes.config
    return partition_clusters(nodes, cfg.cluster_length, cfg.cluster_height)


def square_layout(nodes: NodeSet, cells_per_side: int) -> ClusterLayout:
    if cells_per_side < 1:
        raise GeometryError("cells_per_side must be at least 1")
    size = nodes.side / cells_per_side
    return partition_clusters(nodes, size, size)


def cluster_pair_count(side: float, cell_height: float, vertical_gap: float) -> int:
    """N_C = floor(L / (cell height + vertical gap))."""
    return int(math.floor(side / (cell_height + vertical_gap) + GRID_SLACK))


def build_pair_schedule(layout: ClusterLayout, config: SimulationConfig) -> PairSchedule:
    """Pairs column 0 with 2 and 1 with 3 on every row, then time-shares rows.

    Rows active together are ``row_stride`` apart, which keeps at least
    ``vertical_gap`` of empty space between any two of them. Each
    (column pairing, row offset) runs twice, once per served side, so every
    cluster is the final receiver in exactly one TDMA round.
    """
    d = config.cluster_length
    h = config.cluster_height
    gap = config.vertical_gap
    if not (math.isclose(layout.cell_width, d, rel_tol=1e-9)
            and math.isclose(layout.cell_height, h, rel_tol=1e-9)):
        raise GeometryError(
            f"layout cells {layout.cell_width:.6g} x {layout.cell_height:.6g} do not match "
            f"the pair geometry d x n^(nu/4)/(2 c1) = {d:.6g} x {h:.6g}")

    n_pairs = cluster_pair_count(layout.side, h, gap)
    if n_pairs < 1:
        raise GeometryError(
            f"no cluster pair fits: need L >= n^(nu/4)/(2 c1) + c2 n^(nu/4+eps), "
            f"got L = {layout.side:.6g} < {h:.6g} + {gap:.6g}")
    if layout.cols < 4:
        raise GeometryError(f"pair geometry needs 4 columns of length d, layout has {layout.cols}")

    stride = 1 + math.ceil(gap / h - GRID_SLACK)
    pairs: List[ScheduledPair] = []
    rounds: Dict[int, int] = {}
    tdma_round = 0
    for left, right in ((0, 2), (1, 3)):
        for offset in range(min(stride, layout.rows)):
            active_rows = range(offset, layout.rows, stride)
            for served, partner in ((right, left), (left, right)):
                for row in active_rows:
                    rx_cell = layout.index(row, served)
                    tx_cell = layout.index(row, partner)
                    pairs.append(ScheduledPair(pair_id=len(pairs), row=row, tx_cell=tx_cell,
                                               rx_cell=rx_cell, tdma_round=tdma_round))
                    rounds[rx_cell] = tdma_round
                tdma_round += 1

    logger.debug("✅ Pair schedule: N_C=%d stride=%d rounds=%d", n_pairs, stride, tdma_round)
    return PairSchedule(pairs=pairs, d=d, vertical_gap=gap, n_pairs=n_pairs, row_stride=stride,
                        rounds=rounds, rounds_total=tdma_round, layout=layout)


def chernoff_exponent(delta: float) -> float:
    """Upper-tail exponent (1 + delta) ln(1 + delta) - delta."""
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    return float(xlogy(1 + delta, 1 + delta) - delta)


def lower_chernoff_exponent(delta: float) -> float:
    """Lower-tail exponent (1 - delta) ln(1 - delta) + delta; infinite past delta = 1."""
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if delta > 1:
        return math.inf
    return float(xlogy(1 - delta, 1 - delta) + delta)


def chernoff_deviation_bound(M: float, n: int, nu: float, delta: float,
                             two_sided: bool = False) -> float:
    """Union bound on some cluster of area M leaving (1 +- delta) M n^(1-nu).

    The one-sided form is (n^nu / M) exp(-D+(delta) M n^(1-nu)); the two-sided
    form adds the matching lower-tail term.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    clusters = float(n) ** nu / M
    mean = M * float(n) ** (1 - nu)
    bound = clusters * math.exp(-chernoff_exponent(delta) * mean)
    if two_sided:
        bound += clusters * math.exp(-lower_chernoff_exponent(delta) * mean)
    return bound


def _count_deviation_trial(config: SimulationConfig, size: float, lo: float, hi: float,
                           trial: int) -> Tuple[bool, bool]:
    nodes = generate_network(config, trial)
    layout = partition_clusters(nodes, size, size)
    full = layout.counts[~layout.partial]
    return bool(np.any(full >= hi)), bool(np.any(full <= lo))


def empirical_count_deviation(config: SimulationConfig, M: float, delta: float,
                              trials: int, threads: int = 1) -> DeviationReport:
    """Monte Carlo frequency of any full square cell of area M leaving the band.

    Each trial places a fresh network from stream (seed, trial). Only cells
    lying fully inside the square take part.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not 0 < M <= config.area * (1 + GRID_SLACK):
        raise GeometryError(f"cluster area M = {M} must lie in (0, n^nu]")

    size = math.sqrt(M)
    expected = M * config.density
    lo, hi = (1 - delta) * expected, (1 + delta) * expected
    outcomes = ordered_map(lambda t: _count_deviation_trial(config, size, lo, hi, t),
                           range(trials), threads)
    upper = np.array([o[0] for o in outcomes])
    lower = np.array([o[1] for o in outcomes])

    frequency = float(np.mean(upper | lower))
    bound = chernoff_deviation_bound(M, config.n, config.nu, delta, two_sided=True)
    clipped = min(bound, 1.0)
    cells = int(math.floor(config.side / size + GRID_SLACK)) ** 2
    report = DeviationReport(
        trials=trials, cells=cells, expected=expected, frequency=frequency,
        upper_frequency=float(np.mean(upper)), lower_frequency=float(np.mean(lower)),
        bound=bound, upper_bound=chernoff_deviation_bound(M, config.n, config.nu, delta),
        stderr=math.sqrt(clipped * (1 - clipped) / trials))
    logger.info("📋 Count deviation: frequency %.4g vs bound %.4g over %d trials",
                report.frequency, report.bound, trials)
    return report
