# beamcast/beamform.py

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from .errors import RegimeError
from .log import get_logger
from .netgeom import ClusterLayout, NodeSet, PairSchedule, ScheduledPair
from .parallel import ordered_map
from .rng import Purpose, derive_rng
from .settings import SchemeSettings, SimulationConfig

logger = get_logger(__name__)

# Geometry comparisons tolerate this much floating error.
GEOM_TOL = 1e-9


@dataclass(frozen=True)
class TransmitCluster:
    """Cluster members plus the edge that faces the partner cluster.

    ``facing`` is +1 when the partner lies toward +x. The offset x_k of a
    member is its horizontal distance from the inner edge, so it is
    non-negative for members inside the cluster.
    """

    indices: np.ndarray
    inner_edge: float
    facing: int

    def offsets(self, positions: np.ndarray) -> np.ndarray:
        return self.facing * (self.inner_edge - positions[self.indices, 0])

    @classmethod
    def from_cell(cls, layout: ClusterLayout, cell: int, partner: int) -> "TransmitCluster":
        _, col = layout.row_col(cell)
        _, partner_col = layout.row_col(partner)
        facing = 1 if partner_col > col else -1
        edge = (col + 1) * layout.cell_width if facing > 0 else col * layout.cell_width
        return cls(indices=layout.cells[cell], inner_edge=edge, facing=facing)

    @classmethod
    def facing_point(cls, nodes: NodeSet, indices: Sequence[int],
                     point: Sequence[float]) -> "TransmitCluster":
        """Infers the inner edge from the extreme member on the receiver's side."""
        idx = np.asarray(indices, dtype=np.int64)
        xs = nodes.positions[idx, 0]
        facing = 1 if point[0] >= xs.mean() else -1
        edge = float(xs.max()) if facing > 0 else float(xs.min())
        return cls(indices=idx, inner_edge=edge, facing=facing)


ClusterLike = Union[TransmitCluster, Sequence[int]]


def _as_cluster(nodes: NodeSet, tx: ClusterLike, point: Sequence[float]) -> TransmitCluster:
    if isinstance(tx, TransmitCluster):
        return tx
    return TransmitCluster.facing_point(nodes, tx, point)


def steering_matrix(nodes: NodeSet, rx: Sequence[int], tx: TransmitCluster) -> np.ndarray:
    """exp(2 pi i (r_jk - x_k)) / r_jk for receivers ``rx`` and the cluster members."""
    rx_pos = nodes.positions[np.asarray(rx, dtype=np.int64)]
    tx_pos = nodes.positions[tx.indices]
    r = np.hypot(rx_pos[:, None, 0] - tx_pos[None, :, 0], rx_pos[:, None, 1] - tx_pos[None, :, 1])
    phase = np.mod(r - tx.offsets(nodes.positions)[None, :], 1.0)
    return np.exp(2j * np.pi * phase) / r


def receive_derotation(nodes: NodeSet, rx: TransmitCluster, tx: TransmitCluster) -> np.ndarray:
    """exp(-2 pi i (x_j + d)) for the members of a relaying cluster.

    x_j is measured from the edge of ``rx`` that faces ``tx`` and d is the gap
    between the two inner edges, so a relay re-emits with the phase the
    pair geometry put on it removed.
    """
    gap = abs(rx.inner_edge - tx.inner_edge)
    return np.exp(-2j * np.pi * np.mod(rx.offsets(nodes.positions) + gap, 1.0))


def compensated_gain(nodes: NodeSet, tx: ClusterLike, rx_node: int) -> float:
    """|sum_k exp(2 pi i (r_jk - x_k)) / r_jk| with transmit pre-rotation exp(-2 pi i x_k)."""
    cluster = _as_cluster(nodes, tx, nodes.positions[rx_node])
    if np.any(cluster.indices == rx_node):
        raise ValueError(f"receiver {rx_node} is a member of the transmit cluster")
    return float(abs(steering_matrix(nodes, [rx_node], cluster).sum()))


def full_gain(nodes: NodeSet, tx: ClusterLike, rx_node: int) -> float:
    """sum_k 1/r_jk, the incoherent magnitude sum."""
    cluster = _as_cluster(nodes, tx, nodes.positions[rx_node])
    return float(np.sum(1.0 / np.hypot(*(nodes.positions[cluster.indices]
                                          - nodes.positions[rx_node]).T)))


def gain_lower_bound(nodes: NodeSet, tx: ClusterLike, rx_node: int, c1: float) -> float:
    """cos(pi / c1^2) sum_k 1/r_jk."""
    return math.cos(math.pi / c1 ** 2) * full_gain(nodes, tx, rx_node)


@dataclass(frozen=True)
class SandwichReport:
    max_deviation: float
    min_deviation: float
    upper: float
    geometry_conforming: bool

    @property
    def within(self) -> bool:
        return self.min_deviation >= -GEOM_TOL and self.max_deviation <= self.upper + GEOM_TOL


def distance_sandwich_check(nodes: NodeSet, tx: ClusterLike, rx_node: int, d: float,
                            c1: float) -> SandwichReport:
    """Extremes over k of r_jk - x_k - x_j - d, reported against [0, 1/(2 c1^2)].

    The receiver's cluster edge sits d beyond the transmit cluster's inner
    edge, so x_k + x_j + d is the horizontal span between the two nodes.
    Non-conforming geometry (offsets outside [0, d] or vertical spread above
    sqrt(d)/c1 = n^(nu/4)/(2 c1)) is flagged, never clipped.
    """
    point = nodes.positions[rx_node]
    cluster = _as_cluster(nodes, tx, point)
    tx_pos = nodes.positions[cluster.indices]
    dx = point[0] - tx_pos[:, 0]
    dy = point[1] - tx_pos[:, 1]
    deviation = np.hypot(dx, dy) - cluster.facing * dx

    x_k = cluster.offsets(nodes.positions)
    x_j = cluster.facing * (point[0] - cluster.inner_edge) - d
    conforming = bool(
        np.all(x_k >= -GEOM_TOL) and np.all(x_k <= d + GEOM_TOL)
        and -GEOM_TOL <= x_j <= d + GEOM_TOL
        and np.all(np.abs(dy) <= math.sqrt(d) / c1 + GEOM_TOL))
    report = SandwichReport(max_deviation=float(deviation.max()),
                            min_deviation=float(deviation.min()),
                            upper=1.0 / (2 * c1 ** 2), geometry_conforming=conforming)
    if not conforming:
        logger.warning("⚠️ Receiver %d sees non-conforming pair geometry", rx_node)
    return report


def interference_sum(nodes: NodeSet, interfering_tx_clusters: Sequence[ClusterLike],
                     rx_node: int) -> float:
    """|sum over interfering clusters of sum_k exp(2 pi i (r - x_k)) / r|."""
    total = 0j
    point = nodes.positions[rx_node]
    for tx in interfering_tx_clusters:
        cluster = _as_cluster(nodes, tx, point)
        if cluster.indices.size:
            total += steering_matrix(nodes, [rx_node], cluster).sum()
    return float(abs(total))


def interference_expectation_bound(l: int, c1: float, c2: float, n: int, nu: float,
                                   epsilon: float) -> float:
    """(9 c1 / (pi c2)) / (l d n^eps) with d = n^(nu/2) / 4."""
    if l < 1:
        raise ValueError(f"pair offset index must be at least 1, got {l}")
    if nu <= 2 * epsilon:
        raise RegimeError(f"expectation bound needs nu > 2 eps, got nu = {nu}, eps = {epsilon}")
    d = float(n) ** (nu / 2) / 4
    return 9 * c1 / (math.pi * c2) / (l * d * float(n) ** epsilon)


def oscillatory_integral(u: float, y0: float, y1: float) -> Tuple[float, float]:
    """int_{y0}^{y1} cos(2 pi r) / r dy with r = sqrt(u^2 + y^2); returns (value, abserr)."""
    if y1 == y0:
        return 0.0, 0.0

    def integrand(y: float) -> float:
        r = math.hypot(u, y)
        return math.cos(2 * math.pi * r) / r

    value, err = integrate.quad(integrand, y0, y1, limit=500)
    return float(value), float(err)


@dataclass(frozen=True)
class QuadratureReport:
    samples: int
    bound: float
    max_abs_integral: float
    within: int
    expectation_bound: float

    @property
    def fraction_within(self) -> float:
        return self.within / self.samples if self.samples else 1.0


def integration_by_parts_check(config: SimulationConfig, l: int = 1, samples: int = 1000,
                               trial: int = 0) -> QuadratureReport:
    """Quadrature of the interfering-cluster integral against 9/(2 pi) / (l c2 n^(nu/4+eps)).

    Each sample draws x_k, x_j in [0, d] and the receiver height in its
    cluster; the integral runs over the height of the l-th interfering
    cluster above.
    """
    expectation = interference_expectation_bound(l, config.c1, config.c2, config.n, config.nu,
                                                 config.epsilon)
    d = config.cluster_length
    h = config.cluster_height
    pitch = h + config.vertical_gap
    bound = 9 / (2 * math.pi) / (l * config.c2 * float(config.n) ** (config.nu / 4 + config.epsilon))

    rng = derive_rng(config.seed, trial, Purpose.QUADRATURE)
    draws = rng.uniform(size=(samples, 3))
    within, worst = 0, 0.0
    for xk, xj, yj in draws:
        u = d * xk + d * xj + d
        y0 = l * pitch - h * yj
        value, err = oscillatory_integral(u, y0, y0 + h)
        worst = max(worst, abs(value))
        within += abs(value) <= bound + err
    return QuadratureReport(samples=samples, bound=bound, max_abs_integral=worst, within=within,
                            expectation_bound=expectation)


def hoeffding_tail(span: float, m: int, t: float) -> float:
    """2 exp(-2 m t^2 / span^2); with span = 2/d this is 2 exp(-m d^2 t^2 / 2)."""
    if span <= 0 or m < 1 or t < 0:
        raise ValueError("hoeffding_tail needs span > 0, m >= 1 and t >= 0")
    return 2 * math.exp(-2 * m * t * t / (span * span))


def hoeffding_threshold(n: int, d: float, epsilon: float, epsilon1: float) -> float:
    """t = sqrt(2 n^(eps + eps1 - 1)) / d, which makes the tail 2 exp(-n^eps1) at m = n^(1-eps)."""
    return math.sqrt(2 * float(n) ** (epsilon + epsilon1 - 1)) / d


@dataclass(frozen=True)
class HoeffdingReport:
    trials: int
    frequency: float
    bound: float


def empirical_hoeffding_frequency(span: float, m: int, t: float, trials: int,
                                  seed: int = 0, batch: int = 1000) -> HoeffdingReport:
    """Frequency of |mean of m centred uniforms on a width-``span`` interval| > t."""
    rng = derive_rng(seed, 0, Purpose.HOEFFDING)
    hits = 0
    done = 0
    while done < trials:
        size = min(batch, trials - done)
        means = rng.uniform(-span / 2, span / 2, size=(size, m)).mean(axis=1)
        hits += int(np.count_nonzero(np.abs(means) > t))
        done += size
    return HoeffdingReport(trials=trials, frequency=hits / trials, bound=hoeffding_tail(span, m, t))


def amplification_factor(gain_base: float, snr_floor: float, t: int) -> float:
    """A = snr^(-1/(2t)) / gain_base, so that (A gain_base)^(2t) snr = 1."""
    if gain_base <= 0 or snr_floor <= 0 or t < 1:
        raise ValueError("amplification needs gain_base > 0, snr_floor > 0 and t >= 1")
    return snr_floor ** (-1.0 / (2 * t)) / gain_base


def select_rounds(snr_floor: float, n: int, epsilon: float, max_rounds: int = 64) -> Tuple[int, bool]:
    """Smallest t with snr^(-1/t) <= n^eps, capped at ``max_rounds``; returns (t, capped)."""
    if snr_floor <= 0:
        raise ValueError(f"snr_floor must be positive, got {snr_floor}")
    if snr_floor >= 1:
        return 1, False
    scale = epsilon * math.log(n) if n > 1 else 0.0
    if scale <= 0:
        return max_rounds, True
    t = max(1, math.ceil(-math.log(snr_floor) / scale - 1e-12))
    if t > max_rounds:
        logger.warning("⚠️ Round count %d capped at %d", t, max_rounds)
        return max_rounds, True
    return t, False


@dataclass(frozen=True)
class SlotSpacing:
    tau: int
    raw: float
    duty_cycle: float
    amp_from_power: float
    amp_from_signal: float

    @property
    def power_identity_ratio(self) -> float:
        return self.amp_from_power / self.amp_from_signal

    @property
    def feasible(self) -> bool:
        return self.amp_from_power >= self.amp_from_signal * (1 - 1e-12)


def slot_spacing(P: float, d: float, M: float, n: int, nu: float, t: int, snr_floor: float,
                 epsilon: float, n_pairs: int = 1) -> SlotSpacing:
    """tau = ceil((1/P) (d / (M n^(1-nu)))^2 n^(-eps) snr^(-1/t)), at least 1.

    Also returns the per-node duty cycle N_C M n^(1-nu) / n and both sides of
    the amplification identity (signal target vs. sqrt((n^nu / (N_C M)) tau P)).
    """
    if min(P, d, M, snr_floor) <= 0 or t < 1 or n < 1:
        raise ValueError("slot spacing needs positive P, d, M, snr_floor and t >= 1")
    per_cluster = M * float(n) ** (1 - nu)
    ratio_sq = (d / per_cluster) ** 2
    raw = ratio_sq / P * float(n) ** (-epsilon) * snr_floor ** (-1.0 / t)
    tau = max(1, math.ceil(raw * (1 - 1e-12)))
    return SlotSpacing(
        tau=tau, raw=raw, duty_cycle=n_pairs * per_cluster / n,
        amp_from_power=math.sqrt(float(n) ** nu / (n_pairs * M) * tau * P),
        amp_from_signal=math.sqrt(ratio_sq) * snr_floor ** (-1.0 / (2 * t)))


def budgeted_amplification(gain_base: float, snr_floor: float, t: int,
                           spacing: SlotSpacing) -> Tuple[float, bool]:
    """A from the signal target, capped at the power budget. Returns (A, clamped)."""
    amp = amplification_factor(gain_base, snr_floor, t)
    if amp > spacing.amp_from_power:
        return spacing.amp_from_power, True
    return amp, False


@dataclass(frozen=True)
class SchemeParams:
    t: int
    amp_factor: float
    tau: int
    k1: float
    k2: float
    snr_floor: float
    source: int = -1
    t_capped: bool = False
    phase1_noise: Optional[np.ndarray] = field(default=None, repr=False)
    spacing: Optional[SlotSpacing] = None
    regime_notes: Tuple[str, ...] = ()

    @property
    def regime_violation(self) -> bool:
        return bool(self.regime_notes)


def phase_one_snr(nodes: NodeSet, config: SimulationConfig, source: int) -> np.ndarray:
    """n tau P / r^2 per node with the reference spacing tau = ceil((1/P)(d/(M n^(1-nu)))^2)."""
    tau_ref = max(1, math.ceil((config.pair_gap / config.expected_cluster_count) ** 2
                               / config.power * (1 - 1e-12)))
    r2 = np.sum((nodes.positions - nodes.positions[source]) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        snr = config.n * tau_ref * config.power / r2
    snr[source] = np.inf
    return snr


@dataclass(frozen=True)
class SchemeConstants:
    k1: float
    k2: float
    min_gain: float


def _pair_clusters(layout: ClusterLayout, pair: ScheduledPair) -> Tuple[TransmitCluster, TransmitCluster]:
    served = TransmitCluster.from_cell(layout, pair.rx_cell, pair.tx_cell)
    partner = TransmitCluster.from_cell(layout, pair.tx_cell, pair.rx_cell)
    return served, partner


def _operable(pair: ScheduledPair, layout: ClusterLayout) -> bool:
    return bool(layout.counts[pair.rx_cell] and layout.counts[pair.tx_cell])


@dataclass(frozen=True)
class ServedField:
    """Last-hop field at every served receiver: own-pair gain and interference."""

    rx: np.ndarray
    gain: np.ndarray
    interference: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.interference / self.gain


def served_field(nodes: NodeSet, schedule: PairSchedule) -> ServedField:
    """Partner-to-served gains and cross-pair interference, round by round.

    Interferers of a receiver are the partner clusters of every other
    operable pair in its TDMA round.
    """
    layout = schedule.layout
    rx_parts, gain_parts, interf_parts = [], [], []
    for r in range(schedule.rounds_total):
        clusters = [_pair_clusters(layout, p) for p in schedule.round_pairs(r) if _operable(p, layout)]
        for i, (served, partner) in enumerate(clusters):
            own = steering_matrix(nodes, served.indices, partner).sum(axis=1)
            foreign = np.zeros(served.indices.size, dtype=np.complex128)
            for o, (_, other) in enumerate(clusters):
                if o != i:
                    foreign += steering_matrix(nodes, served.indices, other).sum(axis=1)
            rx_parts.append(served.indices)
            gain_parts.append(np.abs(own))
            interf_parts.append(np.abs(foreign))
    if not rx_parts:
        empty = np.zeros(0)
        return ServedField(rx=empty.astype(np.int64), gain=empty, interference=empty)
    return ServedField(rx=np.concatenate(rx_parts), gain=np.concatenate(gain_parts),
                       interference=np.concatenate(interf_parts))


def measure_scheme_constants(nodes: NodeSet, schedule: PairSchedule,
                             config: SimulationConfig) -> SchemeConstants:
    """K1 from the weakest own-cluster gain, K2 from the strongest interference.

    K1 = min gain / (M n^(1-nu) / d) over receivers of both directions of
    every operable pair. K2 = max interference / (M n^(1-nu) log n / (d n^eps))
    over served receivers, interferers being the partners of the other pairs
    in the same TDMA round.
    """
    served = served_field(nodes, schedule)
    min_gain = float(served.gain.min()) if served.gain.size else math.inf
    layout = schedule.layout
    for pair in schedule.pairs:
        if _operable(pair, layout):
            served_side, partner = _pair_clusters(layout, pair)
            gains = np.abs(steering_matrix(nodes, partner.indices, served_side).sum(axis=1))
            min_gain = min(min_gain, float(gains.min()))
    if not math.isfinite(min_gain):
        min_gain = 0.0

    scale = (config.expected_cluster_count * math.log(max(config.n, 2))
             / (config.pair_gap * float(config.n) ** config.epsilon))
    k2 = float(served.interference.max()) / scale if served.interference.size else 0.0
    return SchemeConstants(k1=min_gain / config.gain_base, k2=k2, min_gain=min_gain)


def scheme_regime_notes(config: SimulationConfig, snr_floor: float, epsilon1: float) -> Tuple[str, ...]:
    notes = []
    threshold = float(config.n) ** (config.nu / 2 - 1 - config.epsilon)
    if snr_floor < threshold:
        notes.append(f"snr floor {snr_floor:.3g} below validity threshold {threshold:.3g}")
    if not (2 * config.epsilon < config.nu <= 2 - (config.epsilon + epsilon1)):
        notes.append(f"nu = {config.nu:g} outside the interference window "
                     f"(2 eps, 2 - eps - eps1]")
    return tuple(notes)


def scheme_regime_ok(config: SimulationConfig, snr_floor: float, epsilon1: float = 0.05) -> bool:
    return not scheme_regime_notes(config, snr_floor, epsilon1)


def plan_scheme(nodes: NodeSet, schedule: PairSchedule, config: SimulationConfig,
                settings: Optional[SchemeSettings] = None, trial: int = 0) -> SchemeParams:
    """Phase 1 SNR floor, round count t, spacing tau and amplification A.

    A is sized on the nominal cluster gain M n^(1-nu) / d and never exceeds
    the relay power budget sqrt((n^nu / (N_C M)) tau P). The measured K1 is
    reported alongside; a weak pair lands below unit signal power instead of
    raising A for every other pair.
    """
    settings = settings or SchemeSettings()
    if config.n < 2:
        raise ValueError("the scheme needs at least two nodes")
    source = int(derive_rng(config.seed, trial, Purpose.SOURCE).integers(config.n))
    snr = phase_one_snr(nodes, config, source)
    others = np.delete(snr, source)
    snr_floor = float(others.min())

    t, capped = select_rounds(snr_floor, config.n, config.epsilon, settings.max_rounds)
    constants = measure_scheme_constants(nodes, schedule, config)
    spacing = slot_spacing(config.power, config.pair_gap, config.cluster_area, config.n, config.nu,
                           t, snr_floor, config.epsilon, schedule.n_pairs)
    amp, clamped = budgeted_amplification(config.gain_base, snr_floor, t, spacing)

    noise = np.where(np.isfinite(snr), snr_floor / snr, 0.0)
    notes = scheme_regime_notes(config, snr_floor, settings.epsilon1)
    if clamped:
        notes += (f"amplification clamped to the power budget {amp:.3g}",)
    for note in notes:
        logger.warning("⚠️ %s", note)
    logger.info("🛠️ Scheme: t=%d tau=%d A=%.4g K1=%.3f K2=%.3f snr_floor=%.3g",
                t, spacing.tau, amp, constants.k1, constants.k2, snr_floor)
    return SchemeParams(t=t, amp_factor=amp, tau=spacing.tau, k1=constants.k1, k2=constants.k2,
                        snr_floor=snr_floor, source=source, t_capped=capped, phase1_noise=noise,
                        spacing=spacing, regime_notes=notes)


@dataclass(frozen=True)
class TraceRecord:
    tdma_round: int
    step: int
    pair: int
    rx_index: int
    signal_mag: float
    noise_power: float
    interference_mag: float
    sinr: float


@dataclass
class BeamformTrace:
    records: List[TraceRecord]
    t: int
    final_sinr: Dict[int, float]
    unserved: List[int]
    noise_bound: float
    regime_violation: bool = False

    @property
    def rates(self) -> Dict[int, float]:
        return {j: math.log2(1 + s) for j, s in self.final_sinr.items()}

    @property
    def min_rate(self) -> float:
        return min(self.rates.values(), default=0.0)

    def fraction_rate_at_least(self, threshold: float) -> float:
        rates = list(self.rates.values())
        return sum(r >= threshold for r in rates) / len(rates) if rates else 0.0

    def noise_profile(self) -> Dict[Tuple[int, int], float]:
        """Mean receiver noise power per (TDMA round, hop)."""
        acc: Dict[Tuple[int, int], List[float]] = {}
        for rec in self.records:
            acc.setdefault((rec.tdma_round, rec.step), []).append(rec.noise_power)
        return {key: float(np.mean(v)) for key, v in sorted(acc.items())}

    @property
    def noise_monotone(self) -> bool:
        profile = self.noise_profile()
        for (r, s), value in profile.items():
            prev = profile.get((r, s - 1))
            if prev is not None and value < prev * (1 - 1e-12):
                return False
        return True

    @property
    def max_noise(self) -> float:
        return max((rec.noise_power for rec in self.records), default=0.0)

    @property
    def noise_within_bound(self) -> bool:
        return self.max_noise <= self.noise_bound


def _simulate_round(nodes: NodeSet, schedule: PairSchedule, params: SchemeParams,
                    tdma_round: int, inject_noise: bool) -> Tuple[List[TraceRecord], Dict[int, float], List[int]]:
    """One TDMA round, hop by hop.

    Noise is never sampled. The receiver noise is circularly symmetric complex
    Gaussian with unit variance, so the hop map is linear in it and its
    covariance C is carried exactly. Every recorded noise power is the
    expectation of |z|^2 over those draws, and no noise RNG stream is drawn.
    """
    layout = schedule.layout
    pairs = schedule.round_pairs(tdma_round)
    active = [p for p in pairs if _operable(p, layout)]
    unserved = [int(j) for p in pairs if not _operable(p, layout) for j in layout.cells[p.rx_cell]]
    if not active:
        return [], {}, unserved

    clusters = [_pair_clusters(layout, p) for p in active]
    t = params.t
    amp = params.amp_factor

    def side(i: int, step: int) -> Tuple[TransmitCluster, TransmitCluster]:
        served, partner = clusters[i]
        return (partner, served) if (t - step) % 2 == 0 else (served, partner)

    first = [side(i, 1)[0] for i in range(len(active))]
    ignition = np.concatenate([c.indices for c in first])
    signal = np.full(ignition.size, math.sqrt(params.snr_floor), dtype=np.complex128)
    if not inject_noise:
        noise = np.zeros((ignition.size, ignition.size), dtype=np.complex128)
    elif params.phase1_noise is None:
        noise = np.eye(ignition.size, dtype=np.complex128)
    else:
        noise = np.diag(params.phase1_noise[ignition]).astype(np.complex128)

    records: List[TraceRecord] = []
    final: Dict[int, float] = {}
    for step in range(1, t + 1):
        tx_side = [side(i, step)[0] for i in range(len(active))]
        rx_side = [side(i, step)[1] for i in range(len(active))]
        rx_idx = np.concatenate([c.indices for c in rx_side])
        rx_owner = np.concatenate([np.full(c.indices.size, i) for i, c in enumerate(rx_side)])
        tx_owner = np.concatenate([np.full(c.indices.size, i) for i, c in enumerate(tx_side)])
        F = np.hstack([steering_matrix(nodes, rx_idx, c) for c in tx_side])
        F *= np.concatenate([receive_derotation(nodes, rc, tc)
                             for rc, tc in zip(rx_side, tx_side)])[:, None]

        signal = amp * (F @ signal)
        noise = amp * amp * (F @ noise @ F.conj().T)
        if inject_noise:
            noise += np.eye(rx_idx.size)
        foreign = rx_owner[:, None] != tx_owner[None, :]
        interference = np.abs(np.where(foreign, F, 0).sum(axis=1))

        power = np.abs(signal) ** 2
        noise_power = noise.diagonal().real.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            sinr = np.where(noise_power > 0, power / noise_power, np.inf)
        for a, j in enumerate(rx_idx):
            records.append(TraceRecord(
                tdma_round=tdma_round, step=step, pair=active[rx_owner[a]].pair_id,
                rx_index=int(j), signal_mag=float(abs(signal[a])),
                noise_power=float(noise_power[a]), interference_mag=float(interference[a]),
                sinr=float(sinr[a])))
        if step == t:
            final = {int(j): float(sinr[a]) for a, j in enumerate(rx_idx)}
    return records, final, unserved


def run_back_and_forth(nodes: NodeSet, schedule: PairSchedule, params: SchemeParams,
                       config: SimulationConfig, noise_constant: float = 2.0,
                       inject_noise: bool = True, threads: int = 1) -> BeamformTrace:
    """Back-and-forth amplify-and-forward over every TDMA round of the schedule.

    Every hop applies the exact complex channel of all simultaneously active
    pairs, so the other pairs' transmissions arrive as interference on the
    signal coefficient. Noise is tracked as an exact covariance matrix: each
    hop maps C to A^2 F C F^H and adds unit-variance receiver noise. The
    ignition side is chosen so the served cluster receives on hop t.
    """
    if params.t < 1 or params.amp_factor <= 0 or params.tau < 1:
        raise ValueError("scheme parameters need t >= 1, A > 0 and tau >= 1")
    outcomes = ordered_map(
        lambda r: _simulate_round(nodes, schedule, params, r, inject_noise),
        range(schedule.rounds_total), threads)

    records: List[TraceRecord] = []
    final: Dict[int, float] = {}
    unserved: List[int] = []
    for recs, fin, lost in outcomes:
        records.extend(recs)
        final.update(fin)
        unserved.extend(lost)

    trace = BeamformTrace(records=records, t=params.t, final_sinr=final, unserved=unserved,
                          noise_bound=noise_constant * (params.t + 1),
                          regime_violation=params.regime_violation)
    if unserved:
        logger.warning("⚠️ %d node(s) sit in pairs with an empty cluster and go unserved",
                       len(unserved))
    if inject_noise and not trace.noise_within_bound:
        logger.warning("⚠️ Noise power %.4g above %.4g", trace.max_noise, trace.noise_bound)
    logger.info("✅ Back-and-forth: %d served receivers, min rate %.4g bit/use",
                len(final), trace.min_rate)
    return trace


def achieved_broadcast_rate(trace: BeamformTrace, tau: int, rounds_total: int,
                            sources: int = 1) -> float:
    """min served log2(1 + SINR) / (tau * rounds_total), times the sources served per cycle.

    One cycle of the scheme carries a single Phase 1 broadcast, so ``sources``
    is 1 for every simulated run.
    """
    if sources < 1:
        raise ValueError("a cycle serves at least one source")
    if not trace.final_sinr:
        return 0.0
    return trace.min_rate / (tau * rounds_total) * sources
