# beamcast/report.py

import csv
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .beamform import BeamformTrace
from .log import get_logger
from .netgeom import NodeSet, cluster_pair_count
from .scaling import ResultRow, ScalingResult
from .settings import SimulationConfig

logger = get_logger(__name__)

RESULTS_HEADER = ("n", "nu", "seed", "quantity", "value")
NODES_HEADER = ("index", "x", "y")
TRACE_HEADER = ("tdma_round", "hop", "pair", "rx_index", "signal_mag", "noise_power",
                "interference_mag", "sinr")


def _num(value: Any) -> str:
    """repr for floats so every written value reads back bit-exactly."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunManifest(BaseModel):
    """Describes one CLI run; every data file of the run is listed in ``outputs``."""

    model_config = ConfigDict(extra="forbid")

    tool_version: str = __version__
    subcommand: str
    config: Dict[str, Any]
    derived: Dict[str, Any] = Field(default_factory=dict)
    threads: int = 1
    started_utc: str
    wall_clock_s: float = 0.0
    outputs: List[str] = Field(default_factory=list)


def derived_parameters(config: SimulationConfig) -> Dict[str, Any]:
    """Geometry quantities shared by every run: L, M, d, cluster height, gap, N_C."""
    return {
        "L": config.side,
        "M": config.cluster_area,
        "d": config.pair_gap,
        "cluster_height": config.cluster_height,
        "vertical_gap": config.vertical_gap,
        "N_C": cluster_pair_count(config.side, config.cluster_height, config.vertical_gap),
        "P": config.power,
        "snr_s": config.snr_s,
    }


class ResultWriter:
    """Writes a run's data files into one output directory.

    The directory is created on first write, so a run that fails during
    validation leaves nothing behind.
    """

    def __init__(self, out_dir: Union[str, Path], subcommand: str, config: SimulationConfig,
                 threads: int = 1):
        self.out_dir = Path(out_dir)
        self._started = datetime.now(timezone.utc)
        self.manifest = RunManifest(subcommand=subcommand, config=config.model_dump(),
                                    derived=derived_parameters(config), threads=threads,
                                    started_utc=self._started.isoformat())

    def reserve(self, name: str) -> Path:
        """Registers an output file and returns its path inside the output directory."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest.outputs.append(name)
        return self.out_dir / name

    def _open(self, name: str):
        return open(self.reserve(name), "w", encoding="utf-8", newline="")

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        with self._open(name) as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            count = 0
            for row in rows:
                writer.writerow([_num(v) for v in row])
                count += 1
        logger.info("✅ %s: %d row(s)", name, count)
        return self.out_dir / name

    def write_results(self, rows: Iterable[ResultRow]) -> Path:
        return self.write_csv("results.csv", RESULTS_HEADER,
                              ((r.n, r.nu, r.seed, r.quantity, r.value) for r in rows))

    def write_nodes(self, nodes: NodeSet) -> Path:
        return self.write_csv("nodes.csv", NODES_HEADER,
                              ((i, float(x), float(y)) for i, (x, y) in enumerate(nodes.positions)))

    def write_trace(self, trace: BeamformTrace) -> Path:
        return self.write_csv("trace.csv", TRACE_HEADER, (
            (r.tdma_round, r.step, r.pair, r.rx_index, r.signal_mag, r.noise_power,
             r.interference_mag, r.sinr)
            for r in trace.records))

    def save_as_json(self, name: str, payload: Dict[str, Any]) -> Path:
        try:
            with self._open(name) as f:
                json.dump(payload, f, indent=2, ensure_ascii=True, allow_nan=True)
                f.write("\n")
        except OSError as e:
            logger.error("❌ Could not write %s: %s", name, e)
            raise
        return self.out_dir / name

    def write_summary(self, fits: Optional[Dict[str, Any]] = None,
                      checks: Optional[List[Dict[str, Any]]] = None,
                      extra: Optional[Dict[str, Any]] = None) -> Path:
        summary = {"fits": fits or {}, "checks": checks or []}
        if extra:
            summary.update(extra)
        return self.save_as_json("summary.json", summary)

    def finish(self, derived: Optional[Dict[str, Any]] = None) -> Path:
        """Writes manifest.json last, with wall-clock time and every output listed."""
        if derived:
            self.manifest.derived.update(derived)
        self.manifest.wall_clock_s = (datetime.now(timezone.utc) - self._started).total_seconds()
        self.manifest.outputs.append("manifest.json")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "manifest.json"
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.manifest.model_dump_json(indent=2))
            f.write("\n")
        logger.info("✅ Run manifest saved to %s", path)
        return path


def fits_payload(result: ScalingResult) -> Dict[str, Any]:
    return {key: {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared,
                  "points": fit.points}
            for key, fit in result.fits.items()}
