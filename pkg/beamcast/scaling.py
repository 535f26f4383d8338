# beamcast/scaling.py

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist
from scipy.stats import linregress

from .beamform import achieved_broadcast_rate, plan_scheme, run_back_and_forth, served_field
from .channel import network_channel_matrix
from .errors import BeamcastError, RegimeError
from .log import get_logger
from .netgeom import build_pair_schedule, generate_network, scheme_layout, square_layout
from .parallel import ordered_map
from .settings import SimulationConfig, ToolSettings
from .spectral import (block_gershgorin_bound, capacity_upper_bound, recursion_schedule,
                       scalar_gershgorin_bound, spectral_norm)

logger = get_logger(__name__)

QUANTITIES = ("norm", "norm_sq", "capacity_bound", "gain_ratio", "interference_ratio",
              "rate", "tdma", "tdma_sim", "gersh_scalar", "gersh_block")
MATRIX_QUANTITIES = {"norm", "norm_sq", "capacity_bound", "gersh_scalar", "gersh_block"}
SCHEME_QUANTITIES = {"gain_ratio", "interference_ratio", "rate"}

# Above this size the n x n matrix behind the dominance check is not built.
DOMINANCE_MAX_N = 8192


def predicted_broadcast_rate(n: int, A: float, snr_s: float) -> float:
    """R_n = min{snr_s, 1} for A >= n^2, else min{(n / sqrt(A)) snr_s, 1}."""
    if A < 1:
        raise ValueError(f"area must be at least 1, got {A}")
    if A >= float(n) ** 2:
        return min(snr_s, 1.0)
    return min(n / math.sqrt(A) * snr_s, 1.0)


def predicted_unicast_throughput(n: int, A: float, snr_s: float) -> float:
    """T_n = n snr_s (A >= n^2), sqrt(A) snr_s (n <= A < n^2), sqrt(n) snr_s (A < n)."""
    if A < 1:
        raise ValueError(f"area must be at least 1, got {A}")
    if A >= float(n) ** 2:
        return n * snr_s
    if A >= n:
        return math.sqrt(A) * snr_s
    return math.sqrt(n) * snr_s


def duality_product(n: int, A: float, snr_s: float) -> float:
    """(T_n / snr_s)(R_n / snr_s) with both predictions uncapped; equals n for A >= n."""
    if A < n:
        raise RegimeError(f"duality needs A >= n (constant density or sparser), got A = {A} < n = {n}")
    if A >= float(n) ** 2:
        unicast, broadcast = float(n), 1.0
    else:
        unicast = math.sqrt(A)
        broadcast = n / unicast
    if broadcast * snr_s > 1:
        logger.warning("⚠️ Broadcast cap binds at n=%d, A=%.4g, snr=%.3g; the identity uses "
                       "uncapped values", n, A, snr_s)
    return unicast * broadcast


def duality_grid(points: int = 100) -> List[Tuple[int, float]]:
    """In-regime (n, A) pairs: n = 2^6..2^15 against area exponents spread over [1, 2]."""
    n_values = [2 ** k for k in range(6, 16)]
    per_n = max(1, math.ceil(points / len(n_values)))
    exponents = np.linspace(1.0, 2.0, per_n)
    grid = [(n, float(n) ** float(e)) for n in n_values for e in exponents]
    return grid[:points]


def tdma_baseline_rate(n: int, nu: float, P: float) -> float:
    """min{n^(1-nu) P, 1}."""
    if P <= 0:
        raise ValueError(f"power must be positive, got {P}")
    return min(float(n) ** (1 - nu) * P, 1.0)


def network_diameter(points: np.ndarray) -> float:
    """Largest pairwise distance, searched over convex hull vertices."""
    if len(points) < 2:
        return 0.0
    candidates = points
    if len(points) >= 3:
        try:
            candidates = points[ConvexHull(points).vertices]
        except QhullError:
            pass
    return float(cdist(candidates, candidates).max())


@dataclass(frozen=True)
class TdmaBaseline:
    rate: float
    closed_form: float
    diameter: float

    @property
    def ratio(self) -> float:
        return self.rate / self.closed_form


def simulate_tdma_baseline(config: SimulationConfig, trial: int = 0) -> TdmaBaseline:
    """One source at a time with spared power n P; worst receiver at the network diameter."""
    nodes = generate_network(config, trial)
    diameter = network_diameter(nodes.positions)
    if diameter <= 0:
        raise ValueError("the TDMA baseline needs at least two distinct nodes")
    rate = math.log2(1 + config.n * config.power / diameter ** 2)
    return TdmaBaseline(rate=rate, closed_form=tdma_baseline_rate(config.n, config.nu, config.power),
                        diameter=diameter)


def boundary_gamma(nu: float) -> float:
    """gamma for which P = n^(nu - 1 - gamma) sits on the P = n^(3 nu / 2 - 2) boundary."""
    return 1 - nu / 2


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    r_squared: float
    points: int


def fit_exponent(points: Iterable[Tuple[float, float]]) -> ExponentFit:
    """Least-squares line through (log n, log value)."""
    pts = list(points)
    if len({n for n, _ in pts}) < 3:
        raise ValueError(f"an exponent fit needs at least 3 distinct n values, got {len(pts)} point(s)")
    ns = np.array([p[0] for p in pts], dtype=float)
    values = np.array([p[1] for p in pts], dtype=float)
    if np.any(ns <= 0) or np.any(values <= 0):
        raise ValueError("exponent fits need positive n and positive values")
    fit = linregress(np.log(ns), np.log(values))
    return ExponentFit(slope=float(fit.slope), intercept=float(fit.intercept),
                       r_squared=float(fit.rvalue) ** 2, points=len(pts))


@dataclass(frozen=True)
class ResultRow:
    n: int
    nu: float
    seed: int
    quantity: str
    value: float


@dataclass(frozen=True)
class CellFailure:
    n: int
    nu: float
    seed: int
    error: str


@dataclass
class ScalingResult:
    rows: List[ResultRow] = field(default_factory=list)
    fits: Dict[str, ExponentFit] = field(default_factory=dict)
    failures: List[CellFailure] = field(default_factory=list)
    dominance_violations: List[ResultRow] = field(default_factory=list)
    dominance_checked: int = 0

    def values(self, quantity: str, nu: Optional[float] = None) -> List[Tuple[int, float]]:
        return [(r.n, r.value) for r in self.rows
                if r.quantity == quantity and (nu is None or r.nu == nu)]

    def means(self, quantity: str, nu: float) -> List[Tuple[int, float]]:
        """Mean over seeds per n, in increasing n."""
        grouped: Dict[int, List[float]] = {}
        for n, value in self.values(quantity, nu):
            grouped.setdefault(n, []).append(value)
        return [(n, float(np.mean(v))) for n, v in sorted(grouped.items())]


def fit_key(quantity: str, nu: float) -> str:
    return f"{quantity}@nu={nu:g}"


def build_grid(base: SimulationConfig, ns: Sequence[int], nus: Sequence[float], trials: int,
               gamma: Optional[float] = None, boundary_power: bool = False) -> List[SimulationConfig]:
    """One config per (nu, n, trial); the trial's seed is base seed XOR trial."""
    if not ns or not nus or trials < 1:
        raise ValueError("the sweep grid needs at least one n, one nu and one trial")
    grid = []
    for nu in nus:
        g = boundary_gamma(nu) if boundary_power else gamma
        for n in ns:
            for trial in range(trials):
                grid.append(base.with_updates(n=n, nu=nu, gamma=g, seed=base.seed ^ trial))
    return grid


def measure_cell(config: SimulationConfig, quantities: Sequence[str],
                 settings: Optional[ToolSettings] = None) -> List[Tuple[str, float]]:
    """Every requested quantity for one placement, in ``QUANTITIES`` order."""
    settings = settings or ToolSettings()
    wanted = set(quantities)
    unknown = wanted - set(QUANTITIES)
    if unknown:
        raise ValueError(f"unknown sweep quantity {sorted(unknown)[0]!r}")
    if "rate" in wanted and config.n <= DOMINANCE_MAX_N:
        wanted.add("capacity_bound")

    nodes = generate_network(config)
    out: Dict[str, float] = {}

    if wanted & MATRIX_QUANTITIES:
        numerics = settings.numerics
        H = network_channel_matrix(nodes).entries
        if wanted & {"norm", "norm_sq", "capacity_bound"}:
            est = spectral_norm(H, tolerance=numerics.power_tolerance,
                                max_iterations=numerics.power_max_iterations,
                                exact_threshold=numerics.exact_threshold, seed=config.seed)
            out["norm"] = est.value
            out["norm_sq"] = est.value ** 2
            out["capacity_bound"] = capacity_upper_bound(config.power, est)
        if "gersh_scalar" in wanted:
            out["gersh_scalar"] = scalar_gershgorin_bound(H)
        if "gersh_block" in wanted:
            area = recursion_schedule(config.n, config.nu, 1).areas[1]
            per_side = max(1, round(config.side / math.sqrt(area)))
            out["gersh_block"] = block_gershgorin_bound(
                H, square_layout(nodes, per_side).blocks(),
                exact_threshold=numerics.exact_threshold)

    if wanted & SCHEME_QUANTITIES:
        schedule = build_pair_schedule(scheme_layout(nodes), config)
        if wanted & {"gain_ratio", "interference_ratio"}:
            served = served_field(nodes, schedule)
            out["gain_ratio"] = float(np.mean(served.gain)) / config.gain_base
            out["interference_ratio"] = float(np.mean(served.ratio))
        if "rate" in wanted:
            params = plan_scheme(nodes, schedule, config, settings.scheme)
            trace = run_back_and_forth(nodes, schedule, params, config,
                                       noise_constant=settings.scheme.noise_constant)
            out["rate"] = achieved_broadcast_rate(trace, params.tau, schedule.rounds_total)

    if "tdma" in wanted:
        out["tdma"] = tdma_baseline_rate(config.n, config.nu, config.power)
    if "tdma_sim" in wanted:
        out["tdma_sim"] = simulate_tdma_baseline(config).rate

    return [(q, out[q]) for q in QUANTITIES if q in wanted and q in out]


def sweep(grid: Sequence[SimulationConfig], quantities: Sequence[str],
          settings: Optional[ToolSettings] = None, threads: int = 1) -> ScalingResult:
    """Runs every grid cell, records failures per cell, then fits exponents.

    Fits use the per-n mean over seeds and are keyed ``quantity@nu=<nu>``;
    a (quantity, nu) series with fewer than 3 distinct n is left unfitted.
    Achieved rate is compared against P ||H||^2 in every cell that has both
    (rate converted to nats, the unit of the bound).
    """
    if not grid:
        raise ValueError("the sweep grid is empty")
    settings = settings or ToolSettings()

    def run(cfg: SimulationConfig):
        try:
            return cfg, measure_cell(cfg, quantities, settings), None
        except (BeamcastError, ValueError) as e:
            return cfg, [], f"{type(e).__name__}: {e}"

    logger.info("🔄 Sweep over %d cell(s): %s", len(grid), ", ".join(quantities))
    result = ScalingResult()
    for cfg, measured, error in ordered_map(run, grid, threads):
        if error is not None:
            logger.warning("⚠️ Cell n=%d nu=%g seed=%d failed: %s", cfg.n, cfg.nu, cfg.seed, error)
            result.failures.append(CellFailure(n=cfg.n, nu=cfg.nu, seed=cfg.seed, error=error))
            continue
        rows = [ResultRow(n=cfg.n, nu=cfg.nu, seed=cfg.seed, quantity=q, value=v) for q, v in measured]
        result.rows.extend(rows)
        by_name = {r.quantity: r for r in rows}
        if "rate" in by_name:
            if "capacity_bound" in by_name:
                result.dominance_checked += 1
                if by_name["rate"].value * math.log(2) > by_name["capacity_bound"].value:
                    result.dominance_violations.append(by_name["rate"])
            else:
                logger.warning("⚠️ Dominance check skipped at n=%d (above %d)", cfg.n,
                               DOMINANCE_MAX_N)

    for nu in sorted({r.nu for r in result.rows}):
        for quantity in QUANTITIES:
            series = result.means(quantity, nu)
            if len(series) < 3:
                continue
            try:
                result.fits[fit_key(quantity, nu)] = fit_exponent(series)
            except ValueError as e:
                logger.warning("⚠️ No fit for %s: %s", fit_key(quantity, nu), e)

    if result.dominance_violations:
        logger.error("❌ %d cell(s) exceed the capacity bound", len(result.dominance_violations))
    logger.info("✅ Sweep done: %d row(s), %d fit(s), %d failure(s)",
                len(result.rows), len(result.fits), len(result.failures))
    return result
