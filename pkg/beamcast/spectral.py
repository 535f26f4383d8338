# beamcast/spectral.py

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, linalg

from .channel import ChannelMatrix, los_entries, pairwise_distances
from .errors import ConvergenceError, GeometryError, PartitionError
from .log import get_logger
from .netgeom import ClusterLayout
from .parallel import ordered_map
from .rng import Purpose, derive_rng
from .settings import SimulationConfig

logger = get_logger(__name__)

EXACT = "exact"
POWER = "power-iteration"

MatrixLike = Union[ChannelMatrix, np.ndarray]


@dataclass(frozen=True)
class NormEstimate:
    value: float
    method: str
    iterations: int
    residual: float


def _entries(H: MatrixLike) -> np.ndarray:
    return H.entries if isinstance(H, ChannelMatrix) else np.asarray(H)


def spectral_norm(H: MatrixLike, tolerance: float = 1e-8, max_iterations: int = 10_000,
                  exact_threshold: int = 64, method: Optional[str] = None,
                  seed: int = 0) -> NormEstimate:
    """Largest singular value of H.

    Small matrices (min dimension <= exact_threshold) go through LAPACK
    singular values (``scipy.linalg.svdvals``). Larger ones use power
    iteration on the smaller Gram matrix, H H^H or H^H H, applied as two
    matrix-vector products, stopped when ||G x - lambda x|| / lambda falls
    to ``tolerance``.

    Args:
        H: matrix or ChannelMatrix.
        tolerance: relative residual at which power iteration stops.
        max_iterations: power-iteration budget.
        exact_threshold: largest min-dimension handled exactly.
        method: force ``"exact"`` or ``"power-iteration"``.
        seed: seed of the random complex start vector.

    Raises:
        ValueError: non-finite entries or unknown method.
        ConvergenceError: budget exhausted; carries the last estimate.
    """
    M = _entries(H)
    if M.size == 0:
        return NormEstimate(0.0, EXACT, 0, 0.0)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if method is None:
        method = EXACT if min(M.shape) <= exact_threshold else POWER
    if method == EXACT:
        return NormEstimate(float(linalg.svdvals(M)[0]), EXACT, 0, 0.0)
    if method != POWER:
        raise ValueError(f"unknown norm method {method!r}")
    if not np.any(M):
        return NormEstimate(0.0, POWER, 0, 0.0)
    return _power_iteration(M, tolerance, max_iterations, seed)


def _power_iteration(M: np.ndarray, tolerance: float, max_iterations: int,
                     seed: int) -> NormEstimate:
    rows, cols = M.shape
    left = rows <= cols
    MH = M.conj().T
    size = rows if left else cols
    rng = derive_rng(seed, 0, Purpose.POWER_START)
    x = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    x /= np.linalg.norm(x)

    lam, residual = 0.0, math.inf
    for it in range(1, max_iterations + 1):
        y = M @ (MH @ x) if left else MH @ (M @ x)
        lam = float(np.vdot(x, y).real)
        ynorm = np.linalg.norm(y)
        if ynorm == 0.0:
            # start vector in the null space; redraw
            x = rng.standard_normal(size) + 1j * rng.standard_normal(size)
            x /= np.linalg.norm(x)
            continue
        residual = float(np.linalg.norm(y - lam * x) / lam)
        if residual <= tolerance:
            return NormEstimate(math.sqrt(lam), POWER, it, residual)
        x = y / ynorm

    last = NormEstimate(math.sqrt(max(lam, 0.0)), POWER, max_iterations, residual)
    raise ConvergenceError(
        f"power iteration stopped at residual {residual:.3g} after {max_iterations} iterations",
        estimate=last)


def validate_partition(partition: Sequence[Sequence[int]], n: int) -> List[np.ndarray]:
    blocks = [np.asarray(b, dtype=np.int64) for b in partition]
    if not blocks or any(b.size == 0 for b in blocks):
        raise PartitionError("partition must consist of non-empty blocks")
    flat = np.concatenate(blocks)
    if flat.size != n or not np.array_equal(np.sort(flat), np.arange(n)):
        raise PartitionError(f"partition is not a disjoint cover of 0..{n - 1}")
    return blocks


def block_norm_matrix(H: MatrixLike, blocks: Sequence[np.ndarray],
                      exact_threshold: int = 64) -> np.ndarray:
    """K x K matrix of sub-block spectral norms ||B_jk||.

    Blocks of equal shape are stacked and sent through one batched LAPACK
    call; blocks larger than ``exact_threshold`` fall back to spectral_norm.
    """
    M = _entries(H)
    K = len(blocks)
    norms = np.zeros((K, K))
    if all(b.size == 1 for b in blocks):
        order = np.array([b[0] for b in blocks])
        return np.abs(M[np.ix_(order, order)])

    by_shape: Dict[Tuple[int, int], List[Tuple[int, int]]] = defaultdict(list)
    for j, bj in enumerate(blocks):
        for k, bk in enumerate(blocks):
            by_shape[(bj.size, bk.size)].append((j, k))

    for (rows, cols), cells in by_shape.items():
        if min(rows, cols) <= exact_threshold:
            stack = np.stack([M[np.ix_(blocks[j], blocks[k])] for j, k in cells])
            values = np.linalg.svd(stack, compute_uv=False)[:, 0]
            for (j, k), v in zip(cells, values):
                norms[j, k] = v
        else:
            for j, k in cells:
                norms[j, k] = spectral_norm(M[np.ix_(blocks[j], blocks[k])],
                                            exact_threshold=exact_threshold).value
    return norms


def _gershgorin_from_norms(norms: np.ndarray) -> float:
    return float(max(norms.sum(axis=1).max(), norms.sum(axis=0).max()))


def block_gershgorin_bound(H: MatrixLike, partition: Sequence[Sequence[int]],
                           exact_threshold: int = 64) -> float:
    """max of the largest block-row and block-column sums of sub-block norms."""
    M = _entries(H)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise PartitionError(f"block bound needs a square matrix, got shape {M.shape}")
    blocks = validate_partition(partition, M.shape[0])
    return _gershgorin_from_norms(block_norm_matrix(M, blocks, exact_threshold))


def scalar_gershgorin_bound(H: MatrixLike) -> float:
    M = np.abs(_entries(H))
    if M.size == 0:
        return 0.0
    return float(max(M.sum(axis=1).max(), M.sum(axis=0).max()))


@dataclass(frozen=True)
class RecursionReport:
    clusters: int
    lhs: float
    lemma4_bound: float
    measured_rhs: float
    near_max: float
    far_measured: float
    far_scale: float
    far_analytic: float
    analytic_rhs: float

    @property
    def measured_holds(self) -> bool:
        return self.lhs <= self.lemma4_bound * (1 + 1e-10)

    @property
    def measured_rhs_holds(self) -> bool:
        return self.lhs <= self.measured_rhs * (1 + 1e-10)

    @property
    def analytic_holds(self) -> bool:
        return self.lhs <= self.analytic_rhs

    @property
    def slack(self) -> float:
        return self.analytic_rhs - self.lhs

    @property
    def far_ratio(self) -> float:
        """Measured far-field sum in units of sqrt(n^eps) sqrt(K1 m1 / A1)."""
        return self.far_measured / self.far_scale if self.far_scale > 0 else 0.0


def verify_recursion_inequality(H: MatrixLike, layout: ClusterLayout, config: SimulationConfig,
                                exact_threshold: int = 64) -> RecursionReport:
    """One level of ||H|| <= 9 max_j ||H(R_j)|| + 8 sqrt(n^eps) sqrt(K1 m1 / A1).

    R_j is cluster j and its grid neighbours (centre distance below
    2 sqrt(A1)); S_j is every other cluster. The far sum over S_j is
    measured directly from the blocks and also replaced by the analytic term.
    """
    M = _entries(H)
    if not math.isclose(layout.cell_width, layout.cell_height, rel_tol=1e-9):
        raise GeometryError("recursion check needs square clusters")
    K = layout.n_cells
    lhs = spectral_norm(M, exact_threshold=exact_threshold).value

    A1 = layout.cell_area
    m1 = A1 * config.density
    far_scale = math.sqrt(float(config.n) ** config.epsilon) * math.sqrt(K * m1 / A1)

    if K == 1:
        return RecursionReport(clusters=1, lhs=lhs, lemma4_bound=lhs, measured_rhs=9 * lhs,
                               near_max=lhs, far_measured=0.0, far_scale=far_scale,
                               far_analytic=8 * far_scale, analytic_rhs=9 * lhs + 8 * far_scale)
    if K < 9:
        raise GeometryError(f"grid too coarse for the near/far split: {K} clusters, need 9")

    occupied = [c for c in range(K) if layout.cells[c].size]
    blocks = [layout.cells[c] for c in occupied]
    norms = block_norm_matrix(M, blocks, exact_threshold)
    lemma4 = _gershgorin_from_norms(norms)

    pos = {c: layout.row_col(c) for c in occupied}
    near_max, far_max = 0.0, 0.0
    for a, c in enumerate(occupied):
        r0, c0 = pos[c]
        near = np.array([abs(pos[o][0] - r0) <= 1 and abs(pos[o][1] - c0) <= 1 for o in occupied])
        members = np.concatenate([blocks[b] for b in np.flatnonzero(near)])
        near_norm = spectral_norm(M[np.ix_(members, members)],
                                  exact_threshold=exact_threshold).value
        far_row = float(norms[a, ~near].sum())
        far_col = float(norms[~near, a].sum())
        near_max = max(near_max, near_norm)
        far_max = max(far_max, far_row, far_col)

    report = RecursionReport(clusters=K, lhs=lhs, lemma4_bound=lemma4,
                             measured_rhs=9 * near_max + far_max,
                             near_max=near_max, far_measured=far_max, far_scale=far_scale,
                             far_analytic=8 * far_scale,
                             analytic_rhs=9 * near_max + 8 * far_scale)
    if not report.measured_holds:
        logger.warning("❌ Block bound %.6g below ||H|| = %.6g", lemma4, lhs)
    return report


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    stderr: float
    trials: int


def _check_moment_geometry(A: float, d: float) -> None:
    if not (2 * math.sqrt(A) <= d <= A):
        raise GeometryError(
            f"cluster geometry needs 2 sqrt(A) <= d <= A, got A = {A:.6g}, d = {d:.6g}")


def cluster_pair_sample(m: int, A: float, d: float,
                        rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """m uniform points in each of two squares of area A, centres d apart horizontally."""
    s = math.sqrt(A)
    tx = rng.uniform(-s / 2, s / 2, size=(m, 2))
    rx = rng.uniform(-s / 2, s / 2, size=(m, 2))
    rx[:, 0] += d
    return rx, tx


def moment_trial(m: int, A: float, d: float, ell: int, seed: int, trial: int) -> float:
    """Tr((H H^H)^ell) for one placement of the two clusters."""
    rx, tx = cluster_pair_sample(m, A, d, derive_rng(seed, trial, Purpose.MOMENT))
    sv = linalg.svdvals(los_entries(pairwise_distances(rx, tx)))
    return float(np.sum(sv ** (2 * ell)))


def trace_moment(m: int, A: float, d: float, ell: int, trials: int, seed: int = 0,
                 threads: int = 1) -> MomentEstimate:
    """Monte Carlo E Tr((H H^H)^ell) for the m x m matrix between two square clusters."""
    if ell < 1:
        raise ValueError(f"moment order must be at least 1, got {ell}")
    if m < 1 or trials < 1:
        raise ValueError("m and trials must be at least 1")
    _check_moment_geometry(A, d)
    values = np.array(ordered_map(lambda t: moment_trial(m, A, d, ell, seed, t),
                                  range(trials), threads))
    stderr = float(values.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return MomentEstimate(mean=float(values.mean()), stderr=stderr, trials=trials)


def first_moment_quadrature(m: int, A: float, d: float) -> float:
    """m^2 E(1/r^2) by adaptive 2-D quadrature.

    Coordinate differences of two uniform squares of side s are triangular:
    dx on [d - s, d + s] peaking at d, dy on [-s, s] peaking at 0.
    """
    _check_moment_geometry(A, d)
    s = math.sqrt(A)

    def triangle(u: float, centre: float) -> float:
        return max(s - abs(u - centre), 0.0) / (s * s)

    def integrand(dy: float, dx: float) -> float:
        return triangle(dx, d) * triangle(dy, 0.0) / (dx * dx + dy * dy)

    value, _ = integrate.dblquad(integrand, d - s, d + s, -s, s, epsabs=1e-14, epsrel=1e-10)
    return m * m * value


@dataclass(frozen=True)
class MomentBound:
    near_branch: float
    far_branch: float

    @property
    def value(self) -> float:
        return max(self.near_branch, self.far_branch)


def moment_bound_shape(m: int, A: float, d: float, ell: int) -> MomentBound:
    """Both branches of max{m^(l+1)/d^(2l), m^(2l) (log A)^(l-1) / (A^(l-1) d^(l+1))}."""
    first = m ** (ell + 1) / d ** (2 * ell)
    second = m ** (2 * ell) * math.log(A) ** (ell - 1) / (A ** (ell - 1) * d ** (ell + 1))
    return MomentBound(near_branch=first, far_branch=second)


def norm_bound_prediction(n: int, nu: float, epsilon: float) -> float:
    """Predicted ||H||^2: n^(2 - 3 nu/2 + eps) below nu = 2, n^(1 - nu + eps) from 2 on."""
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    exponent = 2 - 1.5 * nu if nu < 2 else 1 - nu
    return float(n) ** (exponent + epsilon)


def capacity_upper_bound(P: float, norm: Union[NormEstimate, float]) -> float:
    """Broadcast capacity bound P ||H||^2."""
    if P < 0:
        raise ValueError(f"power must be non-negative, got {P}")
    value = norm.value if isinstance(norm, NormEstimate) else float(norm)
    return P * value * value


@dataclass(frozen=True)
class RecursionSchedule:
    depth: int
    areas: Tuple[float, ...]
    occupancies: Tuple[float, ...]
    branching: Tuple[float, ...]  # K_i for i = 1..depth


def recursion_schedule(n: int, nu: float, depth: int) -> RecursionSchedule:
    """A_i = n^(nu - i/(l+1)), m_i = A_i n^(1-nu), K_i = A_{i-1} / A_i."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    areas = tuple(float(n) ** (nu - i / (depth + 1)) for i in range(depth + 1))
    density = float(n) ** (1 - nu)
    return RecursionSchedule(depth=depth, areas=areas,
                             occupancies=tuple(a * density for a in areas),
                             branching=tuple(areas[i - 1] / areas[i]
                                             for i in range(1, depth + 1)))


def unrolled_norm_bound(schedule: RecursionSchedule, n: int, nu: float, epsilon: float) -> float:
    """sqrt(n^eps) (n^(1-nu) sqrt(A_l) + sqrt(n^(1-nu)) sum_t sqrt(K_t))."""
    slack = math.sqrt(float(n) ** epsilon)
    density = float(n) ** (1 - nu)
    leaf = density * math.sqrt(schedule.areas[-1])
    return slack * (leaf + math.sqrt(density) * sum(math.sqrt(k) for k in schedule.branching))


def sparse_superposition_partition(n: int, nu: float,
                                   rng: np.random.Generator) -> List[np.ndarray]:
    """Random split into ceil(n^(1 - nu/2)) sparse subnetworks (one block from nu = 2 on)."""
    parts = 1 if nu >= 2 else max(1, min(n, math.ceil(float(n) ** (1 - nu / 2))))
    perm = rng.permutation(n)
    return [np.sort(p) for p in np.array_split(perm, parts)]


@dataclass(frozen=True)
class SuperpositionReport:
    parts: int
    norm: float
    block_sum: float
    gershgorin: float

    @property
    def holds(self) -> bool:
        return self.norm <= min(self.block_sum, self.gershgorin) * (1 + 1e-10)


def superposition_check(H: MatrixLike, config: SimulationConfig, trial: int = 0,
                        exact_threshold: int = 64) -> SuperpositionReport:
    """||H|| against the block norms of a sparse-subnetwork row/column split."""
    M = _entries(H)
    blocks = sparse_superposition_partition(M.shape[0], config.nu,
                                            derive_rng(config.seed, trial, Purpose.SUPERPOSITION))
    norms = block_norm_matrix(M, blocks, exact_threshold)
    return SuperpositionReport(parts=len(blocks),
                               norm=spectral_norm(M, exact_threshold=exact_threshold).value,
                               block_sum=float(norms.sum()),
                               gershgorin=_gershgorin_from_norms(norms))


def _complex_gaussian(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))


@dataclass(frozen=True)
class KernelSuiteReport:
    matrices: int
    max_rel_error: float
    failures: int


def _kernel_case(seed: int, trial: int, max_dim: int, tolerance: float) -> float:
    rng = derive_rng(seed, trial, Purpose.KERNEL)
    rows, cols = (int(v) for v in rng.integers(1, max_dim + 1, size=2))
    M = _complex_gaussian(rng, rows, cols)
    exact = spectral_norm(M, method=EXACT).value
    try:
        power = spectral_norm(M, tolerance=tolerance, max_iterations=100_000, method=POWER,
                              seed=seed ^ trial).value
    except ConvergenceError as e:
        power = e.estimate.value
    return abs(power - exact) / exact


def kernel_agreement_suite(count: int, max_dim: int = 64, tolerance: float = 1e-12,
                           seed: int = 0, threads: int = 1, limit: float = 1e-8) -> KernelSuiteReport:
    """Power iteration against exact singular values on random complex matrices."""
    errors = np.array(ordered_map(lambda t: _kernel_case(seed, t, max_dim, tolerance),
                                  range(count), threads))
    report = KernelSuiteReport(matrices=count, max_rel_error=float(errors.max(initial=0.0)),
                               failures=int(np.count_nonzero(errors > limit)))
    logger.info("📋 Kernel suite: %d matrices, max relative error %.3g", count, report.max_rel_error)
    return report


@dataclass(frozen=True)
class BlockSuiteReport:
    matrices: int
    violations: int
    singleton_max_rel_diff: float
    min_slack: float


def random_partition(n: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Random number of blocks with random sizes over a random permutation."""
    k = int(rng.integers(1, n + 1))
    cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False)) if k > 1 else []
    return [np.sort(b) for b in np.split(rng.permutation(n), cuts)]


def _block_case(seed: int, trial: int, max_dim: int) -> Tuple[float, float, float]:
    rng = derive_rng(seed, trial, Purpose.BLOCK_SUITE)
    n = int(rng.integers(1, max_dim + 1))
    M = _complex_gaussian(rng, n, n)
    norm = spectral_norm(M, method=EXACT).value
    bound = block_gershgorin_bound(M, random_partition(n, rng))
    singleton = block_gershgorin_bound(M, [[i] for i in range(n)])
    scalar = scalar_gershgorin_bound(M)
    return norm, bound, abs(singleton - scalar) / scalar


def block_gershgorin_suite(count: int, max_dim: int = 64, seed: int = 0,
                           threads: int = 1) -> BlockSuiteReport:
    """||B|| against the block bound on random complex matrices and random partitions."""
    cases = ordered_map(lambda t: _block_case(seed, t, max_dim), range(count), threads)
    norms = np.array([c[0] for c in cases])
    bounds = np.array([c[1] for c in cases])
    report = BlockSuiteReport(
        matrices=count,
        violations=int(np.count_nonzero(norms > bounds * (1 + 1e-12))),
        singleton_max_rel_diff=float(max(c[2] for c in cases)) if cases else 0.0,
        min_slack=float((bounds / norms).min()) if cases else math.inf)
    if report.violations:
        logger.warning("❌ %d block bound violation(s) in %d matrices", report.violations, count)
    return report


@dataclass(frozen=True)
class MomentCase:
    m: int
    ell: int
    A: float
    d: float
    estimate: MomentEstimate
    shape: MomentBound

    @property
    def ratio(self) -> float:
        return self.estimate.mean / self.shape.value


@dataclass(frozen=True)
class MomentSuiteReport:
    cases: List[MomentCase]
    constants: Dict[int, float]  # per ell, calibrated at the smallest m
    quadrature: Dict[int, float]  # m -> m^2 E(1/r^2)

    def excess(self, ell: int) -> float:
        """Largest ratio / calibrated constant over the moment order's cases."""
        return max(c.ratio / self.constants[ell] for c in self.cases if c.ell == ell)

    def quadrature_sigma(self, m: int) -> float:
        """|Monte Carlo first moment - quadrature| in standard errors."""
        case = next(c for c in self.cases if c.ell == 1 and c.m == m)
        gap = abs(case.estimate.mean - self.quadrature[m])
        return gap / case.estimate.stderr if case.estimate.stderr > 0 else (0.0 if gap == 0 else math.inf)


def moment_suite(ms: Sequence[int], ells: Sequence[int], trials: int, seed: int = 0,
                 threads: int = 1, separation: float = 3.0) -> MomentSuiteReport:
    """Trace moments at unit density (A = m) with d = separation * sqrt(A).

    The constant of each moment order is calibrated at the smallest m; the
    first moment is also compared with its quadrature value.
    """
    cases = []
    for ell in ells:
        for m in sorted(ms):
            A = float(m)
            d = separation * math.sqrt(A)
            cases.append(MomentCase(m=m, ell=ell, A=A, d=d,
                                    estimate=trace_moment(m, A, d, ell, trials, seed, threads),
                                    shape=moment_bound_shape(m, A, d, ell)))
    constants = {ell: next(c.ratio for c in cases if c.ell == ell) for ell in ells}
    quadrature = {}
    if 1 in ells:
        quadrature = {m: first_moment_quadrature(m, float(m), separation * math.sqrt(m)) for m in ms}
    return MomentSuiteReport(cases=cases, constants=constants, quadrature=quadrature)
