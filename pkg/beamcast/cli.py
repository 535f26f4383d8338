# beamcast/cli.py
# Command-line entry point: config ingestion, subcommand dispatch, result files.

import argparse
import math
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .acceptance import AcceptanceChecker, CheckResult, checks_payload
from .beamform import (BeamformTrace, TransmitCluster, achieved_broadcast_rate, compensated_gain,
                       distance_sandwich_check, empirical_hoeffding_frequency, gain_lower_bound,
                       hoeffding_threshold, integration_by_parts_check,
                       interference_expectation_bound, plan_scheme, run_back_and_forth)
from .channel import network_channel_matrix, save_matrix
from .errors import BeamcastError, ConfigError
from .log import configure_logging, get_logger
from .netgeom import (NodeSet, PairSchedule, build_pair_schedule, empirical_count_deviation,
                      generate_network, scheme_layout, square_layout)
from .report import ResultWriter, fits_payload
from .scaling import (QUANTITIES, ResultRow, ScalingResult, boundary_gamma, build_grid,
                      duality_grid, duality_product, fit_key, simulate_tdma_baseline, sweep)
from .settings import CONFIG_KEYS, SimulationConfig, ToolSettings, load_config, load_settings
from .spectral import (block_gershgorin_suite, capacity_upper_bound, kernel_agreement_suite,
                       moment_suite, norm_bound_prediction, scalar_gershgorin_bound, spectral_norm,
                       superposition_check, verify_recursion_inequality)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CHECK_FAILED = 2


class BeamcastArgumentParser(argparse.ArgumentParser):
    """argparse that raises ConfigError instead of exiting with status 2."""

    def error(self, message: str) -> None:
        raise ConfigError(message)


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _common_flags() -> argparse.ArgumentParser:
    common = BeamcastArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config with keys " + ", ".join(CONFIG_KEYS))
    common.add_argument("--n", type=int)
    common.add_argument("--nu", type=float)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--c1", type=float)
    common.add_argument("--c2", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int, help="independent seeds or Monte Carlo trials")
    common.add_argument("--threads", type=int, help="worker threads; never changes results")
    common.add_argument("--out", metavar="DIR", help="output directory")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")
    return common


def build_parser() -> BeamcastArgumentParser:
    common = _common_flags()
    parser = BeamcastArgumentParser(
        prog="beamcast", description="Broadcast capacity laboratory for LOS wireless networks.")
    parser.add_argument("--version", action="version", version=f"beamcast {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=BeamcastArgumentParser)
    sub.required = True

    sub.add_parser("generate", parents=[common], help="place nodes and build the pair schedule")

    p = sub.add_parser("spectral", parents=[common], help="||H||, the capacity bound and kernel checks")
    p.add_argument("--dump-matrix", action="store_true", help="write channel.losm")
    p.add_argument("--kernel-check", type=int, metavar="COUNT",
                   help="compare power iteration with exact SVD on COUNT random matrices")
    p.add_argument("--recursion", type=int, metavar="CELLS_PER_SIDE",
                   help="check one level of the near/far recursion on a square grid")
    p.add_argument("--superposition", action="store_true",
                   help="block norms over a random sparse-subnetwork split")

    p = sub.add_parser("gershgorin", parents=[common], help="block Gershgorin property suite")
    p.add_argument("--matrices", type=int, default=10_000)
    p.add_argument("--max-dim", type=int, default=64)

    p = sub.add_parser("beamform", parents=[common], help="simulate back-and-forth beamforming")
    p.add_argument("--boundary-power", action="store_true",
                   help="set gamma so that P = n^(3 nu/2 - 2)")
    p.add_argument("--no-noise", action="store_true", help="disable noise injection")

    p = sub.add_parser("lemma", parents=[common], help="numerical checks of the supporting lemmas")
    p.add_argument("which", choices=["1", "2", "3", "5"])
    p.add_argument("--M", type=float, help="cluster area (lemma 1)")
    p.add_argument("--delta", type=float, default=0.5, help="deviation fraction (lemma 1)")
    p.add_argument("--l", type=int, default=1, help="interfering pair offset (lemma 3)")
    p.add_argument("--samples", type=int, default=1000, help="quadrature samples (lemma 3)")
    p.add_argument("--hoeffding-trials", type=int, default=10_000)
    p.add_argument("--m", type=_int_list, default=[16, 64, 256], help="cluster sizes (lemma 5)")
    p.add_argument("--ell", type=_int_list, default=[1, 2], help="moment orders (lemma 5)")

    p = sub.add_parser("sweep", parents=[common], help="scaling sweep with exponent fits")
    p.add_argument("--ns", type=_int_list, default=[256, 512, 1024, 2048, 4096])
    p.add_argument("--nus", type=_float_list)
    p.add_argument("--quantities", default="norm_sq",
                   help="comma-separated subset of " + ",".join(QUANTITIES))
    p.add_argument("--boundary-power", action="store_true",
                   help="set gamma so that P = n^(3 nu/2 - 2) in every cell")

    p = sub.add_parser("duality", parents=[common], help="(T_n/snr)(R_n/snr) = n")
    p.add_argument("--area-exp", type=float, default=1.5, help="A = n^area_exp")
    p.add_argument("--snr", type=float, help="snr_s (defaults to n^-gamma)")
    p.add_argument("--grid-points", type=int, help="check the identity on an in-regime grid")

    sub.add_parser("baseline", parents=[common], help="TDMA baseline, closed form and simulated")
    return parser


class Run:
    """State shared by one subcommand invocation."""

    def __init__(self, args: argparse.Namespace, config: SimulationConfig, settings: ToolSettings):
        self.args = args
        self.config = config
        self.settings = settings
        self.threads = args.threads or settings.runtime.threads
        self.writer = ResultWriter(args.out or settings.runtime.out_dir, args.command, config,
                                   self.threads)
        self.rows: List[ResultRow] = []
        self.metrics: Dict[str, float] = {}
        self.derived: Dict[str, Any] = {}
        self.fits: Dict[str, Any] = {}
        self.extra: Dict[str, Any] = {}

    def trials(self, default: int) -> int:
        return self.args.trials if self.args.trials is not None else default

    def seeds(self, default: int = 1) -> List[SimulationConfig]:
        return [self.config.with_updates(seed=self.config.seed ^ t) for t in range(self.trials(default))]

    def row(self, quantity: str, value: float, config: Optional[SimulationConfig] = None) -> None:
        cfg = config or self.config
        self.rows.append(ResultRow(n=cfg.n, nu=cfg.nu, seed=cfg.seed, quantity=quantity,
                                   value=float(value)))


def _schedule(nodes: NodeSet) -> PairSchedule:
    return build_pair_schedule(scheme_layout(nodes), nodes.config)


def run_generate(run: Run) -> None:
    nodes = generate_network(run.config)
    layout = scheme_layout(nodes)
    schedule = build_pair_schedule(layout, run.config)
    full = layout.counts[~layout.partial]
    run.writer.write_nodes(nodes)
    run.row("clusters", layout.n_cells)
    run.row("partial_clusters", int(layout.partial.sum()))
    run.row("cluster_count_min", int(full.min()) if full.size else 0)
    run.row("cluster_count_max", int(full.max()) if full.size else 0)
    run.row("cluster_count_expected", run.config.expected_cluster_count)
    run.row("pairs_per_round", schedule.max_active_pairs)
    run.row("rounds_total", schedule.rounds_total)
    run.derived.update(row_stride=schedule.row_stride, rounds_total=schedule.rounds_total)
    print(f"{len(nodes)} nodes on side {nodes.side:.6g}: {layout.n_cells} clusters, "
          f"{schedule.rounds_total} TDMA rounds, N_C = {schedule.n_pairs}")


def run_spectral(run: Run) -> None:
    numerics = run.settings.numerics
    args = run.args
    if args.kernel_check:
        report = kernel_agreement_suite(args.kernel_check, seed=run.config.seed, threads=run.threads)
        run.metrics["kernel_max_rel_error"] = report.max_rel_error
        run.row("kernel_max_rel_error", report.max_rel_error)
        print(f"kernel check: {report.matrices} matrices, max relative error {report.max_rel_error:.3g}")
        return

    nodes = generate_network(run.config)
    H = network_channel_matrix(nodes)
    est = spectral_norm(H, tolerance=numerics.power_tolerance,
                        max_iterations=numerics.power_max_iterations,
                        exact_threshold=numerics.exact_threshold, seed=run.config.seed)
    run.row("norm", est.value)
    run.row("norm_sq", est.value ** 2)
    run.row("capacity_bound", capacity_upper_bound(run.config.power, est))
    run.row("norm_sq_prediction", norm_bound_prediction(run.config.n, run.config.nu,
                                                        run.config.epsilon))
    run.row("gersh_scalar", scalar_gershgorin_bound(H))
    run.derived.update(norm_method=est.method, norm_iterations=est.iterations)

    if args.recursion:
        rec = verify_recursion_inequality(H, square_layout(nodes, args.recursion), run.config,
                                          numerics.exact_threshold)
        for name in ("lemma4_bound", "measured_rhs", "near_max", "far_measured", "analytic_rhs"):
            run.row(f"recursion_{name}", getattr(rec, name))
        run.row("recursion_far_ratio", rec.far_ratio)
        run.row("recursion_slack", rec.slack)
        run.metrics["recursion_violations"] = int(not rec.measured_holds) + int(not rec.measured_rhs_holds)
        run.derived.update(recursion_clusters=rec.clusters,
                           recursion_measured_holds=rec.measured_holds,
                           recursion_analytic_holds=rec.analytic_holds)
        print(f"recursion over {rec.clusters} clusters: measured bound "
              f"{'holds' if rec.measured_holds else 'fails'}, analytic bound "
              f"{'holds' if rec.analytic_holds else 'fails'} (slack {rec.slack:.6g})")
    if args.superposition:
        sup = superposition_check(H, run.config, exact_threshold=numerics.exact_threshold)
        run.row("superposition_parts", sup.parts)
        run.row("superposition_block_sum", sup.block_sum)
        run.row("superposition_gershgorin", sup.gershgorin)
    if args.dump_matrix:
        save_matrix(H, run.writer.reserve("channel.losm"))
    print(f"||H|| = {est.value:.6g} ({est.method}), P||H||^2 = {run.config.power * est.value ** 2:.6g}")


def run_gershgorin(run: Run) -> None:
    report = block_gershgorin_suite(run.args.matrices, run.args.max_dim, seed=run.config.seed,
                                    threads=run.threads)
    run.metrics.update(gershgorin_violations=report.violations,
                       singleton_max_rel_diff=report.singleton_max_rel_diff)
    run.row("gershgorin_violations", report.violations)
    run.row("singleton_max_rel_diff", report.singleton_max_rel_diff)
    run.row("min_slack", report.min_slack)
    print(f"{report.matrices} matrices: {report.violations} violation(s), singleton agreement "
          f"{report.singleton_max_rel_diff:.3g}")


def _beamform_trial(run: Run, config: SimulationConfig) -> Tuple[BeamformTrace, Dict[str, float]]:
    nodes = generate_network(config)
    schedule = _schedule(nodes)
    params = plan_scheme(nodes, schedule, config, run.settings.scheme)
    trace = run_back_and_forth(nodes, schedule, params, config,
                               noise_constant=run.settings.scheme.noise_constant,
                               inject_noise=not run.args.no_noise, threads=run.threads)
    values = {
        "t": params.t, "tau": params.tau, "amp_factor": params.amp_factor, "k1": params.k1,
        "k2": params.k2, "snr_floor": params.snr_floor, "rounds_total": schedule.rounds_total,
        "min_rate": trace.min_rate, "max_noise": trace.max_noise,
        "rate": achieved_broadcast_rate(trace, params.tau, schedule.rounds_total),
        "served": len(trace.final_sinr), "unserved": len(trace.unserved),
        "regime_violation": int(params.regime_violation),
        "noise_monotone": int(trace.noise_monotone),
    }
    if params.spacing is not None:
        values["power_identity_ratio"] = params.spacing.power_identity_ratio
    return trace, values


def run_beamform(run: Run) -> None:
    config = run.config
    served, good, within = 0, 0, True
    first_trace = None
    for cfg in [config.with_updates(seed=config.seed ^ t) for t in range(run.trials(1))]:
        trace, values = _beamform_trial(run, cfg)
        if first_trace is None:
            first_trace = trace
            run.derived.update({k: values[k] for k in ("t", "tau", "amp_factor", "rounds_total")})
        for name, value in values.items():
            run.row(name, value, cfg)
        rates = list(trace.rates.values())
        served += len(rates)
        good += sum(r >= 0.1 for r in rates)
        within = within and trace.noise_within_bound
    run.writer.write_trace(first_trace)
    fraction = good / served if served else 0.0
    run.metrics["rate_fraction_at_least_0.1"] = fraction
    if not run.args.no_noise:
        run.metrics["noise_within_bound"] = int(within)
    print(f"served {served} receiver(s); {fraction:.2%} at rate >= 0.1; "
          f"noise within bound: {within}")


def run_lemma1(run: Run) -> None:
    M = run.args.M
    if M is None:
        raise ConfigError("M: lemma 1 needs --M")
    report = empirical_count_deviation(run.config, M, run.args.delta, run.trials(1000), run.threads)
    run.metrics.update(deviation_frequency=report.frequency, deviation_limit=report.dominance_limit)
    for name in ("frequency", "upper_frequency", "lower_frequency", "bound", "upper_bound", "stderr"):
        run.row(f"deviation_{name}", getattr(report, name))
    print(f"empirical {report.frequency:.4g} vs bound {report.bound:.4g} "
          f"(+3 sigma: {report.dominance_limit:.4g}) over {report.trials} trials")


def run_lemma2(run: Run) -> None:
    c1 = run.config.c1
    d = run.config.pair_gap
    checked, gain_fail, sandwich_fail, nonconforming = 0, 0, 0, 0
    ratios = []
    for cfg in run.seeds(1):
        nodes = generate_network(cfg)
        schedule = _schedule(nodes)
        layout = schedule.layout
        for pair in schedule.pairs:
            tx = layout.cells[pair.tx_cell]
            if not tx.size:
                continue
            from_cell = TransmitCluster.from_cell(layout, pair.tx_cell, pair.rx_cell)
            for j in layout.cells[pair.rx_cell]:
                report = distance_sandwich_check(nodes, from_cell, int(j), d, c1)
                if not report.geometry_conforming:
                    nonconforming += 1
                    continue
                checked += 1
                gain = compensated_gain(nodes, from_cell, int(j))
                ratios.append(gain / cfg.gain_base)
                gain_fail += gain < gain_lower_bound(nodes, from_cell, int(j), c1) * (1 - 1e-12)
                sandwich_fail += not report.within
    run.metrics.update(gain_bound_violations=gain_fail, sandwich_violations=sandwich_fail)
    run.row("receivers_checked", checked)
    run.row("nonconforming", nonconforming)
    run.row("gain_bound_violations", gain_fail)
    run.row("sandwich_violations", sandwich_fail)
    if ratios:
        run.row("gain_ratio_mean", float(np.mean(ratios)))
        run.row("gain_ratio_min", float(np.min(ratios)))
    print(f"{checked} receiver(s): {gain_fail} gain bound and {sandwich_fail} sandwich violation(s)")


def run_lemma3(run: Run) -> None:
    cfg = run.config
    args = run.args
    quad = integration_by_parts_check(cfg, l=args.l, samples=args.samples)
    d = cfg.pair_gap
    m = max(1, round(float(cfg.n) ** (1 - cfg.epsilon)))
    t = hoeffding_threshold(cfg.n, d, cfg.epsilon, run.settings.scheme.epsilon1)
    hoeff = empirical_hoeffding_frequency(2 / d, m, t, args.hoeffding_trials, seed=cfg.seed)
    run.metrics.update(quadrature_fraction_within=quad.fraction_within,
                       hoeffding_frequency=hoeff.frequency, hoeffding_bound=hoeff.bound)
    run.row("expectation_bound", interference_expectation_bound(args.l, cfg.c1, cfg.c2, cfg.n,
                                                                cfg.nu, cfg.epsilon))
    run.row("quadrature_bound", quad.bound)
    run.row("quadrature_max_abs", quad.max_abs_integral)
    run.row("quadrature_fraction_within", quad.fraction_within)
    run.row("hoeffding_threshold", t)
    run.row("hoeffding_frequency", hoeff.frequency)
    run.row("hoeffding_bound", hoeff.bound)
    print(f"quadrature within bound in {quad.fraction_within:.2%} of {quad.samples} samples; "
          f"Hoeffding frequency {hoeff.frequency:.4g} vs bound {hoeff.bound:.4g}")


def run_lemma5(run: Run) -> None:
    args = run.args
    suite = moment_suite(args.m, args.ell, run.trials(200), seed=run.config.seed,
                         threads=run.threads)
    for case in suite.cases:
        run.row(f"moment_l{case.ell}_m{case.m}", case.estimate.mean)
        run.row(f"moment_l{case.ell}_m{case.m}_stderr", case.estimate.stderr)
        run.row(f"moment_l{case.ell}_m{case.m}_shape", case.shape.value)
    for ell in args.ell:
        run.metrics[f"moment_excess_l{ell}"] = suite.excess(ell)
        run.row(f"moment_excess_l{ell}", suite.excess(ell))
    if suite.quadrature:
        sigmas = [suite.quadrature_sigma(m) for m in args.m]
        run.metrics["quadrature_sigma_max"] = max(sigmas)
        for m in args.m:
            run.row(f"moment_l1_m{m}_quadrature", suite.quadrature[m])
    print("moment excess: " + ", ".join(f"l={ell}: {suite.excess(ell):.3f}" for ell in args.ell))


def _sweep_metrics(result: ScalingResult, epsilon: float, boundary_power: bool) -> Dict[str, float]:
    metrics: Dict[str, float] = {f"slope:{k}": f.slope for k, f in result.fits.items()}
    if result.dominance_checked:
        metrics["dominance_violations"] = len(result.dominance_violations)
    for nu in sorted({r.nu for r in result.rows}):
        series = result.means("norm_sq", nu)
        if series:
            n0, v0 = series[0]
            exponent = math.log(norm_bound_prediction(n0, nu, epsilon)) / math.log(n0)
            scale = v0 / float(n0) ** exponent
            metrics[f"envelope_excess:{fit_key('norm_sq', nu)}"] = max(
                v / (scale * float(n) ** exponent) for n, v in series)
        key = fit_key("rate", nu)
        if boundary_power and key in result.fits:
            metrics[f"rate_exponent_gap@nu={nu:g}"] = abs(result.fits[key].slope + epsilon)
    return metrics


def run_sweep(run: Run) -> None:
    args = run.args
    quantities = [q.strip() for q in args.quantities.split(",") if q.strip()]
    unknown = [q for q in quantities if q not in QUANTITIES]
    if unknown:
        raise ConfigError(f"quantities: unknown quantity {unknown[0]!r}")
    grid = build_grid(run.config, args.ns, args.nus or [run.config.nu], run.trials(1),
                      boundary_power=args.boundary_power)
    result = sweep(grid, quantities, run.settings, run.threads)
    run.rows.extend(result.rows)
    run.fits = fits_payload(result)
    run.metrics.update(_sweep_metrics(result, run.config.epsilon, args.boundary_power))
    run.extra["failures"] = [vars(f) for f in result.failures]
    for key, fit in result.fits.items():
        print(f"{key}: slope {fit.slope:.4f} (r^2 = {fit.r_squared:.4f})")
    if not result.fits:
        print(f"{len(result.rows)} row(s); no series with 3 or more n values to fit")


def run_duality(run: Run) -> None:
    cfg = run.config
    args = run.args
    snr = args.snr if args.snr is not None else cfg.snr_s
    product = duality_product(cfg.n, float(cfg.n) ** args.area_exp, snr)
    run.row("duality_product", product)
    print(f"{product:.12g}")
    if args.grid_points:
        errors = [abs(duality_product(n, A, snr) - n) / n for n, A in duality_grid(args.grid_points)]
        run.metrics["duality_max_rel_error"] = max(errors)
        run.row("duality_max_rel_error", max(errors))
        print(f"{len(errors)} grid points, max relative error {max(errors):.3g}")
    else:
        run.metrics["duality_max_rel_error"] = abs(product - cfg.n) / cfg.n


def run_baseline(run: Run) -> None:
    ratios = []
    for cfg in run.seeds(1):
        base = simulate_tdma_baseline(cfg)
        run.row("tdma", base.closed_form, cfg)
        run.row("tdma_sim", base.rate, cfg)
        run.row("diameter", base.diameter, cfg)
        ratios.append(base.ratio)
    run.metrics["baseline_ratio"] = float(np.mean(ratios))
    print(f"simulated / closed form = {run.metrics['baseline_ratio']:.4f}")


def run_lemma(run: Run) -> None:
    LEMMAS[run.args.which](run)


LEMMAS: Dict[str, Callable[[Run], None]] = {
    "1": run_lemma1, "2": run_lemma2, "3": run_lemma3, "5": run_lemma5}

COMMANDS: Dict[str, Callable[[Run], None]] = {
    "generate": run_generate, "spectral": run_spectral, "gershgorin": run_gershgorin,
    "beamform": run_beamform, "lemma": run_lemma, "sweep": run_sweep, "duality": run_duality,
    "baseline": run_baseline,
}


def _check_name(args: argparse.Namespace) -> str:
    return f"lemma{args.which}" if args.command == "lemma" else args.command


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one subcommand; returns 0, 1 on invalid input or 2 on a failed acceptance check."""
    try:
        args = build_parser().parse_args(argv)
        configure_logging("DEBUG" if args.verbose else "WARNING" if args.quiet else None)
        settings = load_settings()
        overrides = {k: getattr(args, k) for k in CONFIG_KEYS}
        config = load_config(args.config, overrides)
        if args.command == "beamform" and args.boundary_power and args.gamma is None:
            config = config.with_updates(gamma=boundary_gamma(config.nu))
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads: must be at least 1")
        if args.trials is not None and args.trials < 1:
            raise ConfigError("trials: must be at least 1")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID

    run = Run(args, config, settings)
    logger.info("🔄 beamcast %s: n=%d nu=%g seed=%d", args.command, config.n, config.nu, config.seed)
    try:
        COMMANDS[args.command](run)
    except (BeamcastError, ValueError) as e:
        logger.error("❌ %s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID

    checks: List[CheckResult] = AcceptanceChecker().check(_check_name(args), run.metrics)
    run.writer.write_results(run.rows)
    run.writer.write_summary(fits=run.fits, checks=checks_payload(checks),
                             extra={"metrics": run.metrics, **run.extra})
    run.writer.finish(run.derived)
    return EXIT_CHECK_FAILED if any(c.failed for c in checks) else EXIT_OK


def main() -> None:
    sys.exit(dispatch())
