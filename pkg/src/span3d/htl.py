"""Hierarchical task learning: epoch-wise loss weights gated by pre-task progress.

Each task's weight follows ``omega = (t / T_e) ** (1 - alpha)``, where
``alpha`` is the geometric mean of the learning-status indicators of the
task's pre-tasks. A status compares the recent loss trend (mean absolute
first difference over a ``K``-epoch window) with the trend of the first
complete window.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from span3d.errors import ConfigError, InvalidArgumentError, NotReadyError, ParseError

DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class TaskNode:
    id: str
    stage: int
    pre_tasks: frozenset = frozenset()
    base_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pre_tasks", frozenset(self.pre_tasks))


class TaskGraph:
    """Staged DAG of tasks; every pre-task lives in a strictly earlier stage."""

    def __init__(self, nodes: Iterable[TaskNode]):
        self.nodes = {}
        for n in nodes:
            if n.id in self.nodes:
                raise ConfigError(f"duplicate task id {n.id!r}")
            if n.stage < 1:
                raise ConfigError(f"task {n.id!r}: stage must be >= 1, got {n.stage}")
            self.nodes[n.id] = n
        for n in self.nodes.values():
            for p in n.pre_tasks:
                if p not in self.nodes:
                    raise ConfigError(f"task {n.id!r}: unknown pre-task {p!r}")
                if self.nodes[p].stage >= n.stage:
                    raise ConfigError(
                        f"task {n.id!r} (stage {n.stage}) depends on {p!r} "
                        f"(stage {self.nodes[p].stage}); pre-tasks must be in earlier stages"
                    )

    def __iter__(self):
        return iter(self.nodes.values())

    def __len__(self):
        return len(self.nodes)

    @property
    def task_ids(self) -> list:
        return list(self.nodes)

    def to_dict(self) -> list:
        return [
            {
                "id": n.id,
                "stage": n.stage,
                "pre_tasks": sorted(n.pre_tasks),
                "base_weight": n.base_weight,
            }
            for n in self
        ]

    @classmethod
    def from_dict(cls, tasks: Sequence[Mapping]) -> "TaskGraph":
        nodes = []
        allowed = {"id", "stage", "pre_tasks", "base_weight"}
        for entry in tasks:
            unknown = set(entry) - allowed
            if unknown:
                raise ConfigError(f"unknown task keys: {sorted(unknown)}")
            try:
                nodes.append(
                    TaskNode(
                        id=str(entry["id"]),
                        stage=int(entry["stage"]),
                        pre_tasks=frozenset(entry.get("pre_tasks", ())),
                        base_weight=float(entry.get("base_weight", 1.0)),
                    )
                )
            except KeyError as e:
                raise ConfigError(f"task entry missing key {e.args[0]!r}") from None
        return cls(nodes)


def default_task_graph() -> TaskGraph:
    """Four-stage hierarchy, one task per weighted loss term.

    Stage 1 is 2D detection, stage 2 dimensions and orientation, stage 3
    depth, stage 4 the two alignment losses (gated by the 3D attribute
    tasks).
    """
    s1 = ("class", "bbox2d_dim", "center2d", "giou2d")
    s2 = ("dim3d", "angle")
    s3 = ("depth",)
    return TaskGraph(
        [
            TaskNode("class", 1, (), 2.0),
            TaskNode("bbox2d_dim", 1, (), 5.0),
            TaskNode("center2d", 1, (), 2.0),
            TaskNode("giou2d", 1, (), 10.0),
            TaskNode("dim3d", 2, s1, 1.0),
            TaskNode("angle", 2, s1, 1.0),
            TaskNode("depth", 3, s1 + s2, 1.0),
            TaskNode("corner3d", 4, s2 + s3, 1.0),
            TaskNode("proj", 4, s2 + s3, 1.0),
        ]
    )


# -- scalar pieces ---------------------------------------------------------------


def loss_trend(history: Sequence[float], t: int, K: int = DEFAULT_WINDOW) -> float:
    """Mean absolute first difference of epoch losses over epochs t-K .. t-1."""
    if K < 1:
        raise InvalidArgumentError(f"window must be >= 1, got {K}")
    if t < K + 1 or len(history) < t:
        raise NotReadyError(f"trend at epoch {t} needs epochs {t - K - 1}..{t - 1}")
    return sum(abs(history[s] - history[s - 1]) for s in range(t - K, t)) / K


def learning_status(df_k: float, df_t: float) -> float:
    """Clamped relative drop of the loss trend; 1 means the task has settled."""
    if df_k < 0 or df_t < 0:
        raise InvalidArgumentError(f"trends must be non-negative, got {df_k}, {df_t}")
    if df_k == 0:
        return 1.0
    return min(1.0, max(0.0, (df_k - df_t) / df_k))


def alpha(statuses: Sequence[float]) -> float:
    """Geometric mean of pre-task statuses."""
    if len(statuses) == 0:
        raise InvalidArgumentError("alpha needs at least one pre-task status")
    prod = 1.0
    for s in statuses:
        if not 0.0 <= s <= 1.0:
            raise InvalidArgumentError(f"status must lie in [0, 1], got {s}")
        prod *= s
    return prod ** (1.0 / len(statuses))


def alpha_gradient(statuses: Sequence[float]) -> list:
    """d alpha / d status_k for each k (diagnostic only).

    Uses the product-of-others form so a zero status among others gives 0
    and a zero status at k with non-zero others gives +inf.
    """
    n = len(statuses)
    if n == 0:
        raise InvalidArgumentError("alpha needs at least one pre-task status")
    out = []
    for k, sk in enumerate(statuses):
        others = 1.0
        for j, s in enumerate(statuses):
            if j != k:
                others *= s
        num = others ** (1.0 / n)
        den_pow = 1.0 - 1.0 / n
        if den_pow == 0.0:
            out.append(1.0)
        elif sk == 0.0:
            out.append(math.inf if num > 0 else 0.0)
        else:
            out.append(num / (n * sk**den_pow))
    return out


def omega(t: float, T_e: float, alpha_val: float) -> float:
    if T_e <= 0:
        raise InvalidArgumentError(f"total epochs must be positive, got {T_e}")
    if not 0 <= t <= T_e:
        raise InvalidArgumentError(f"epoch {t} outside [0, {T_e}]")
    if not 0.0 <= alpha_val <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha_val}")
    expo = 1.0 - alpha_val
    if expo == 0.0:
        return 1.0
    return (t / T_e) ** expo


# -- scheduler -------------------------------------------------------------------


@dataclass(frozen=True)
class EpochWeights:
    """Snapshot of one scheduler step."""

    epoch: int
    status: Mapping[str, float]
    alpha: Mapping[str, float]
    omega: Mapping[str, float]


@dataclass
class SchedulerState:
    graph: TaskGraph
    total_epochs: int
    window: int = DEFAULT_WINDOW
    history: dict = field(default_factory=dict)
    df_first: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.total_epochs <= 0:
            raise ConfigError(f"total_epochs must be positive, got {self.total_epochs}")
        if self.window <= 0:
            raise ConfigError(f"window must be positive, got {self.window}")
        for tid in self.graph.task_ids:
            self.history.setdefault(tid, [])

    @property
    def epoch(self) -> int:
        """Index of the latest recorded epoch (-1 before the first step)."""
        return len(next(iter(self.history.values()), [])) - 1

    def status(self, task_id: str, t: int) -> float:
        """Learning status at epoch ``t``; 0 while the trend window is incomplete."""
        hist = self.history[task_id]
        try:
            df_t = loss_trend(hist, t, self.window)
        except NotReadyError:
            return 0.0
        if task_id not in self.df_first:
            self.df_first[task_id] = df_t
        return learning_status(self.df_first[task_id], df_t)

    def step(self, epoch_losses: Mapping[str, float]) -> EpochWeights:
        missing = [tid for tid in self.graph.task_ids if tid not in epoch_losses]
        if missing:
            raise ConfigError(f"epoch losses missing task(s): {', '.join(missing)}")
        t = self.epoch + 1
        if t > self.total_epochs:
            raise ConfigError(f"epoch {t} exceeds total_epochs={self.total_epochs}")
        for tid in self.graph.task_ids:
            self.history[tid].append(float(epoch_losses[tid]))
        status = {tid: self.status(tid, t) for tid in self.graph.task_ids}
        alphas = {}
        omegas = {}
        for node in self.graph:
            if not node.pre_tasks:
                alphas[node.id] = 1.0
                omegas[node.id] = 1.0
                continue
            a = alpha([status[p] for p in sorted(node.pre_tasks)])
            alphas[node.id] = a
            omegas[node.id] = omega(t, self.total_epochs, a)
        return EpochWeights(
            epoch=t,
            status=MappingProxyType(status),
            alpha=MappingProxyType(alphas),
            omega=MappingProxyType(omegas),
        )


def step_epoch(state: SchedulerState, epoch_losses: Mapping[str, float]) -> Mapping[str, float]:
    """Record one epoch of task losses and return the weight map for it."""
    return state.step(epoch_losses).omega


def weighted_total(
    losses: Mapping[str, float], weights: Mapping[str, float], graph: TaskGraph
) -> float:
    """sum_i lambda_i * omega_i * L_i over the graph's tasks."""
    return sum(n.base_weight * weights[n.id] * losses[n.id] for n in graph)


# -- CSV replay ------------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "task_id", "mean_loss")
TRACE_COLUMNS = ("epoch", "task", "l_s", "alpha", "omega")


def read_history_csv(text: str) -> dict:
    """Parse ``epoch,task_id,mean_loss`` rows into per-task loss lists."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or set(HISTORY_COLUMNS) - set(reader.fieldnames):
        raise ParseError(f"history CSV must have columns {', '.join(HISTORY_COLUMNS)}")
    per_task = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            epoch = int(row["epoch"])
            loss = float(row["mean_loss"])
        except (TypeError, ValueError) as e:
            raise ParseError(str(e), line=lineno) from None
        per_task.setdefault(row["task_id"], {})[epoch] = loss
    out = {}
    for tid, by_epoch in per_task.items():
        epochs = sorted(by_epoch)
        if epochs != list(range(len(epochs))):
            raise ParseError(f"task {tid!r}: epochs must be contiguous from 0")
        out[tid] = [by_epoch[e] for e in epochs]
    return out


def write_history_csv(histories: Mapping[str, Sequence[float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    n = max((len(h) for h in histories.values()), default=0)
    for epoch in range(n):
        for tid, hist in histories.items():
            if epoch < len(hist):
                w.writerow((epoch, tid, repr(float(hist[epoch]))))
    return buf.getvalue()


def replay(
    histories: Mapping[str, Sequence[float]],
    graph: TaskGraph,
    window: int = DEFAULT_WINDOW,
    total_epochs: int | None = None,
) -> list:
    """Feed recorded losses through a fresh scheduler; one snapshot per epoch."""
    missing = [tid for tid in graph.task_ids if tid not in histories]
    if missing:
        raise ConfigError(f"loss history missing task(s): {', '.join(missing)}")
    n = min(len(histories[tid]) for tid in graph.task_ids)
    if n < 2:
        raise ConfigError("loss history needs at least two epochs")
    if total_epochs is None:
        total_epochs = n - 1
    state = SchedulerState(graph, total_epochs, window)
    steps = []
    for epoch in range(min(n, total_epochs + 1)):
        steps.append(state.step({tid: histories[tid][epoch] for tid in graph.task_ids}))
    return steps


def trace_csv(steps: Sequence[EpochWeights], graph: TaskGraph) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for s in steps:
        for tid in graph.task_ids:
            w.writerow((s.epoch, tid, repr(s.status[tid]), repr(s.alpha[tid]), repr(s.omega[tid])))
    return buf.getvalue()
