"""Task registry and the two-level batch sampling: task first, then dataset."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contrastive import LabeledExample

HEAD_LOGISTIC = "logistic"
HEAD_SOFTMAX = "softmax"

DEFAULT_BATCH_SIZE = 32


class RegistryError(ValueError):
    pass


@dataclass
class DatasetHandle:
    dataset_id: str
    task_id: int
    examples: list[LabeledExample]

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class TaskSpec:
    task_id: int
    name: str
    modalities: tuple[str, ...]
    head_type: str
    num_classes: int
    datasets: list[DatasetHandle]
    sampling_weight: float | None = None  # None -> proportional to dataset size
    sampling_prob: float = 0.0  # normalized at registration
    class_name_tokens: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.head_type not in (HEAD_LOGISTIC, HEAD_SOFTMAX):
            raise RegistryError(f"unknown head type {self.head_type!r}")
        if self.head_type == HEAD_LOGISTIC and self.num_classes != 2:
            raise RegistryError("logistic heads are binary only")
        if self.num_classes < 2:
            raise RegistryError("need at least two classes")

    @property
    def total_examples(self) -> int:
        return sum(len(d) for d in self.datasets)

    def train_pool(self) -> list[LabeledExample]:
        pool: list[LabeledExample] = []
        for d in self.datasets:
            pool.extend(d.examples)
        return pool


@dataclass
class Batch:
    task_id: int
    dataset_id: str
    examples: list[LabeledExample]


class TaskRegistry:
    """Registered tasks with normalized sampling probabilities."""

    def __init__(self) -> None:
        self._tasks: dict[int, TaskSpec] = {}

    def __len__(self) -> int:
        return len(self._tasks)

    def __iter__(self):
        return iter(self.tasks())

    def tasks(self) -> list[TaskSpec]:
        return [self._tasks[tid] for tid in sorted(self._tasks)]

    def get(self, task_id: int) -> TaskSpec:
        if task_id not in self._tasks:
            raise RegistryError(f"task {task_id} is not registered")
        return self._tasks[task_id]

    def register_task(self, spec: TaskSpec) -> "TaskRegistry":
        if spec.task_id in self._tasks:
            raise RegistryError(f"duplicate task id {spec.task_id}")
        if not spec.datasets:
            raise RegistryError("a task needs at least one dataset")
        for d in spec.datasets:
            if not d.examples:
                raise RegistryError(f"dataset {d.dataset_id} is empty")
        self._tasks[spec.task_id] = spec
        self._renormalize()
        return self

    def _renormalize(self) -> None:
        weights = {
            tid: (t.sampling_weight if t.sampling_weight is not None else float(t.total_examples))
            for tid, t in self._tasks.items()
        }
        total = sum(weights.values())
        if total <= 0:
            # every task weighted zero so far; treat as uniform
            for t in self._tasks.values():
                t.sampling_prob = 1.0 / len(self._tasks)
            return
        for tid, t in self._tasks.items():
            t.sampling_prob = weights[tid] / total


def sample_task(registry: TaskRegistry, rng: np.random.Generator) -> int:
    tasks = registry.tasks()
    if not tasks:
        raise RegistryError("empty registry")
    probs = np.array([t.sampling_prob for t in tasks])
    idx = rng.choice(len(tasks), p=probs)
    return tasks[idx].task_id


def sample_dataset(task: TaskSpec, rng: np.random.Generator) -> str:
    idx = int(rng.integers(0, len(task.datasets)))
    return task.datasets[idx].dataset_id


def fill_batch(dataset: DatasetHandle, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sample; with replacement only when the dataset is smaller than the batch."""
    n = len(dataset)
    if n == 0:
        raise RegistryError(f"dataset {dataset.dataset_id} is empty")
    replace = n < batch_size
    idx = rng.choice(n, size=batch_size, replace=replace)
    return Batch(
        task_id=dataset.task_id,
        dataset_id=dataset.dataset_id,
        examples=[dataset.examples[i] for i in idx],
    )
