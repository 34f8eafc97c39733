"""Strict JSON run configuration.

Top-level sections, all optional::

    {
      "fit":     {FitConfig fields},
      "dag":     {"tasks": [{"id", "stage", "pre_tasks", "base_weight"}, ...],
                  "window": 5, "total_epochs": null},
      "filters": {"max_truncation": 0.0, "max_occlusion": 3, "categories": null},
      "suite":   {"n_scenes": 100, "workers": 1}
    }

Omitted fields take the defaults printed by ``span3d config-defaults``.
Unknown keys at any level raise :class:`ConfigError`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from span3d.errors import ConfigError
from span3d.fit import FitConfig
from span3d.htl import DEFAULT_WINDOW, TaskGraph, default_task_graph
from span3d.kitti import DeviationFilters


@dataclass(frozen=True)
class DagConfig:
    graph: TaskGraph = field(default_factory=default_task_graph)
    window: int = DEFAULT_WINDOW
    total_epochs: int | None = None

    def to_dict(self) -> dict:
        return {
            "tasks": self.graph.to_dict(),
            "window": self.window,
            "total_epochs": self.total_epochs,
        }


@dataclass(frozen=True)
class SuiteConfig:
    n_scenes: int = 100
    workers: int = 1

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ConfigError(f"n_scenes must be >= 1, got {self.n_scenes}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class RunConfig:
    fit: FitConfig = FitConfig()
    dag: DagConfig = DagConfig()
    filters: DeviationFilters = DeviationFilters()
    suite: SuiteConfig = SuiteConfig()

    def to_dict(self) -> dict:
        filters = asdict(self.filters)
        if filters["categories"] is not None:
            filters["categories"] = list(filters["categories"])
        return {
            "fit": self.fit.to_dict(),
            "dag": self.dag.to_dict(),
            "filters": filters,
            "suite": asdict(self.suite),
        }


def _check_keys(section: str, d, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")


def _build(cls, section: str, d: dict):
    _check_keys(section, d, {f.name for f in fields(cls)})
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"{section}: {e}") from None


def parse_config(doc: dict) -> RunConfig:
    _check_keys("<root>", doc, {"fit", "dag", "filters", "suite"})
    fit = FitConfig.from_dict(doc.get("fit", {}))
    dag_doc = doc.get("dag", {})
    _check_keys("dag", dag_doc, {"tasks", "window", "total_epochs"})
    graph = TaskGraph.from_dict(dag_doc["tasks"]) if "tasks" in dag_doc else default_task_graph()
    window = dag_doc.get("window", DEFAULT_WINDOW)
    total = dag_doc.get("total_epochs")
    if not isinstance(window, int) or window < 1:
        raise ConfigError(f"dag.window must be a positive integer, got {window!r}")
    if total is not None and (not isinstance(total, int) or total < 1):
        raise ConfigError(f"dag.total_epochs must be a positive integer, got {total!r}")
    filt_doc = dict(doc.get("filters", {}))
    if filt_doc.get("categories") is not None:
        filt_doc["categories"] = tuple(filt_doc["categories"])
    filters = _build(DeviationFilters, "filters", filt_doc)
    suite = _build(SuiteConfig, "suite", doc.get("suite", {}))
    return RunConfig(fit=fit, dag=DagConfig(graph, window, total), filters=filters, suite=suite)


def load_config(path) -> RunConfig:
    """Read and validate a config file; a missing path yields the defaults."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return parse_config(doc)


def default_config_json() -> str:
    return json.dumps(RunConfig().to_dict(), indent=2, sort_keys=True) + "\n"
