from __future__ import annotations

import logging
import math
import threading
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

from .collapse_oracle import DEFAULT_ENUMERATION_CAP, EnumerationCapError
from .experiment import Schedule
from .macrostate import Label
from .physication import PendingStep, World, complete_step, prepare_step, trial_rng

logger = logging.getLogger(__name__)

Path = tuple[Label, ...]
ProgressHook = Callable[[dict[str, Any]], None]


@dataclass(eq=False)
class BranchNode:
    world: World
    depth: int
    probability: float = 1.0
    pending: PendingStep | None = None
    children: dict[Label, BranchNode] = field(default_factory=dict)
    labels: list[Label] = field(default_factory=list)
    cumulative: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class Leaf:
    path: Path
    probability: float
    world: World


class BranchTree:
    """Worlds keyed by the labels chosen so far, expanded on demand.

    One tree belongs to one thread; Worlds themselves are immutable.
    """

    def __init__(self, schedule: Schedule, root: World | None = None) -> None:
        self.schedule = schedule
        self.root = BranchNode(world=root or schedule.initial_world(), depth=0)

    def is_leaf(self, node: BranchNode) -> bool:
        return node.depth == len(self.schedule.events)

    def prepare(self, node: BranchNode) -> PendingStep:
        if node.pending is None:
            node.pending = prepare_step(node.world, self.schedule.events[node.depth])
            node.labels = sorted(node.pending.support)
            node.cumulative = np.cumsum([node.pending.support[label] for label in node.labels])
        return node.pending

    def child(self, node: BranchNode, label: Label) -> BranchNode:
        existing = node.children.get(label)
        if existing is not None:
            return existing
        pending = self.prepare(node)
        world, _ = complete_step(pending, label)
        created = BranchNode(
            world=world,
            depth=node.depth + 1,
            probability=node.probability * pending.support[label],
        )
        node.children[label] = created
        return created

    def walk(self, rng: np.random.Generator) -> tuple[BranchNode, Path]:
        node = self.root
        path: list[Label] = []
        while not self.is_leaf(node):
            self.prepare(node)
            draw = rng.random() * node.cumulative[-1]
            index = min(int(np.searchsorted(node.cumulative, draw, side="right")), len(node.labels) - 1)
            label = node.labels[index]
            path.append(label)
            node = self.child(node, label)
        return node, tuple(path)

    def enumerate(self, cap: int = DEFAULT_ENUMERATION_CAP) -> list[Leaf]:
        frontier: list[tuple[BranchNode, Path]] = [(self.root, ())]
        for _ in self.schedule.events:
            expanded = []
            for node, path in frontier:
                pending = self.prepare(node)
                for label in sorted(pending.support):
                    expanded.append((self.child(node, label), path + (label,)))
                if len(expanded) > cap:
                    raise EnumerationCapError(cap=cap, reached=len(expanded))
            frontier = expanded
        return [Leaf(path=path, probability=node.probability, world=node.world) for node, path in frontier]


def physication_chain(
    schedule: Schedule, leaves: list[Leaf]
) -> dict[tuple[str, ...], float]:
    chain: dict[tuple[str, ...], float] = defaultdict(float)
    for leaf in leaves:
        chain[schedule.outcome_key(leaf.path)] += leaf.probability
    return dict(chain)


@dataclass
class TrialBatch:
    paths: list[Path]
    leaves: dict[Path, World]
    outcomes: list[tuple[str, ...]]

    @property
    def trials(self) -> int:
        return len(self.paths)

    def counts(self) -> Counter[tuple[str, ...]]:
        return Counter(self.outcomes)

    def ledgers(self) -> Iterator:
        for path in self.paths:
            yield self.leaves[path].ledger


def _chunks(trials: int, workers: int) -> list[range]:
    size = math.ceil(trials / workers)
    return [range(start, min(start + size, trials)) for start in range(0, trials, size)]


def run_trials(
    schedule: Schedule,
    *,
    trials: int,
    master_seed: int,
    threads: int = 1,
    root: World | None = None,
    progress_hook: ProgressHook | None = None,
) -> TrialBatch:
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    workers = max(1, min(threads, trials))
    root = root or schedule.initial_world()
    report_every = max(1, trials // 10)
    completed = 0
    lock = threading.Lock()

    def _report(done: int) -> None:
        nonlocal completed
        if progress_hook is None:
            return
        with lock:
            completed += done
            progress_hook(
                {
                    "completed_trials": completed,
                    "total_trials": trials,
                    "percent_complete": min(100.0, completed / trials * 100.0),
                }
            )

    def _worker(indices: range) -> tuple[list[Path], dict[Path, World]]:
        tree = BranchTree(schedule, root)
        paths: list[Path] = []
        leaves: dict[Path, World] = {}
        pending_report = 0
        for trial in indices:
            leaf, path = tree.walk(trial_rng(master_seed, trial))
            paths.append(path)
            leaves.setdefault(path, leaf.world)
            pending_report += 1
            if pending_report == report_every:
                _report(pending_report)
                pending_report = 0
        if pending_report:
            _report(pending_report)
        return paths, leaves

    chunks = _chunks(trials, workers)
    logger.info("Running %d trials of %s on %d worker(s).", trials, schedule.config.name, len(chunks))
    if len(chunks) == 1:
        results = [_worker(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            # map keeps chunk order, so trial order does not depend on scheduling
            results = list(pool.map(_worker, chunks))

    paths: list[Path] = []
    leaves: dict[Path, World] = {}
    for chunk_paths, chunk_leaves in results:
        paths.extend(chunk_paths)
        for path, world in chunk_leaves.items():
            leaves.setdefault(path, world)
    return TrialBatch(
        paths=paths,
        leaves=leaves,
        outcomes=[schedule.outcome_key(path) for path in paths],
    )
