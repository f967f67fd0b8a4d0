"""Phase profiler: wall time and distance calculations per named block."""

import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

from .core import DistCounter
from .models import PhaseReport


@dataclass
class PhaseEntry:
    name: str
    seconds: float = 0.0
    calls: int = 0
    counter: DistCounter = field(default_factory=DistCounter)


class Profiler:
    """Accumulates named phases for one build or one request.

    Each ``time_block`` yields the phase's own :class:`DistCounter`; distance
    evaluations made inside the block are charged to that phase.
    """

    def __init__(self, label: str = "") -> None:
        self.label = label
        self.start_time = time.perf_counter()
        self.end_time: Optional[float] = None
        self.phases: Dict[str, PhaseEntry] = {}
        self._lock = threading.Lock()

    def phase(self, name: str) -> PhaseEntry:
        with self._lock:
            entry = self.phases.get(name)
            if entry is None:
                entry = self.phases[name] = PhaseEntry(name)
            return entry

    @contextmanager
    def time_block(self, name: str) -> Iterator[DistCounter]:
        """Context manager timing a code block and yielding its counter."""
        entry = self.phase(name)
        start = time.perf_counter()
        try:
            yield entry.counter
        finally:
            elapsed = time.perf_counter() - start
            with self._lock:
                entry.seconds += elapsed
                entry.calls += 1

    def merge(self, other: "Profiler") -> None:
        """Fold another profiler (a worker's or a sub-build's) into this one."""
        for name, theirs in other.phases.items():
            mine = self.phase(name)
            with self._lock:
                mine.seconds += theirs.seconds
                mine.calls += theirs.calls
                mine.counter.add(theirs.counter.count)

    def stop(self) -> float:
        self.end_time = time.perf_counter()
        return self.elapsed

    @property
    def elapsed(self) -> float:
        end = self.end_time if self.end_time is not None else time.perf_counter()
        return end - self.start_time

    @property
    def distance_calcs(self) -> int:
        return sum(p.counter.count for p in self.phases.values())

    def phase_reports(self) -> Dict[str, PhaseReport]:
        return {
            name: PhaseReport(seconds=p.seconds, distance_calcs=p.counter.count)
            for name, p in self.phases.items()
        }

    def bottlenecks(self, top: int = 3) -> List[Tuple[str, float]]:
        return sorted(
            ((p.name, p.seconds) for p in self.phases.values()),
            key=lambda x: x[1],
            reverse=True,
        )[:top]

    def summary(self) -> Dict[str, Any]:
        total = self.elapsed
        return {
            "label": self.label,
            "total_time": total,
            "distance_calcs": self.distance_calcs,
            "phases": [
                {
                    "name": p.name,
                    "seconds": p.seconds,
                    "percentage": (p.seconds / total) * 100 if total > 0 else 0,
                    "distance_calcs": p.counter.count,
                    "calls": p.calls,
                }
                for p in self.phases.values()
            ],
            "bottlenecks": self.bottlenecks(),
        }
