# beamcast/acceptance.py

import json
import operator
import os
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Union

from .errors import ConfigError
from .log import get_logger

logger = get_logger(__name__)

PASSED = "passed"
FAILED = "failed"
SKIPPED = "skipped"

Threshold = Union[float, str, List[float]]

OPERATORS: Dict[str, Callable[[float, Any], bool]] = {
    "<=": operator.le,
    "<": operator.lt,
    ">=": operator.ge,
    ">": operator.gt,
    "==": operator.eq,
    "between": lambda v, bounds: bounds[0] <= v <= bounds[1],
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    metric: str
    value: Optional[float]
    op: str
    threshold: Threshold
    status: str
    description: str = ""

    @property
    def failed(self) -> bool:
        return self.status == FAILED


class AcceptanceChecker:
    """Evaluates the rule book in acceptance.json against computed metrics.

    A rule compares one metric with a constant, a [low, high] pair or another
    metric named by string. Rules whose metric is absent from a run are
    reported as skipped.
    """

    def __init__(self, rules_path: str = "acceptance.json"):
        self.rules_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), rules_path)
        self.rules = self._load_rules()
        logger.debug("✅ %d acceptance rule(s) loaded from %s", len(self.rules), self.rules_path)

    def _load_rules(self) -> List[Dict[str, Any]]:
        if not os.path.exists(self.rules_path):
            raise ConfigError(f"acceptance rule book not found at {self.rules_path}")
        with open(self.rules_path, "r", encoding="utf-8") as f:
            content = json.load(f)
        if "rules" not in content:
            raise ConfigError("acceptance rule book must contain a 'rules' key")
        for rule in content["rules"]:
            if rule.get("op") not in OPERATORS:
                raise ConfigError(f"{rule.get('name', '<unnamed>')}: unknown operator {rule.get('op')!r}")
        return content["rules"]

    def rules_for(self, subcommand: str) -> List[Dict[str, Any]]:
        return [r for r in self.rules if r.get("applies_to") == subcommand]

    def _evaluate(self, rule: Dict[str, Any], metrics: Mapping[str, float]) -> CheckResult:
        metric = rule["metric"]
        threshold = rule["threshold"]
        value = metrics.get(metric)
        if isinstance(threshold, str):
            threshold = metrics.get(threshold)
        if value is None or threshold is None:
            status = SKIPPED
        else:
            status = PASSED if OPERATORS[rule["op"]](value, threshold) else FAILED
        return CheckResult(name=rule["name"], metric=metric,
                           value=None if value is None else float(value), op=rule["op"],
                           threshold=rule["threshold"] if threshold is None else threshold,
                           status=status, description=rule.get("description", ""))

    def check(self, subcommand: str, metrics: Mapping[str, float]) -> List[CheckResult]:
        results = [self._evaluate(rule, metrics) for rule in self.rules_for(subcommand)]
        failed = [r.name for r in results if r.failed]
        if failed:
            logger.warning("❌ Acceptance check(s) failed: %s", ", ".join(failed))
        else:
            logger.info("📋 Acceptance: %d passed, %d skipped",
                        sum(r.status == PASSED for r in results),
                        sum(r.status == SKIPPED for r in results))
        return results


def checks_payload(results: List[CheckResult]) -> List[Dict[str, Any]]:
    return [asdict(r) for r in results]
