# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""Reader protection without reader locks.

`GracePeriod` defers reclamation of retired nodes: entering a read section
takes a ticket from an `itertools.count` and records the current epoch in a
dict. A node retired at epoch e is reclaimed only once no reader that
entered at or before e is still inside its section.

`WriteSequence` lets readers detect a concurrent in-place mutation: the
writer makes the sequence odd for the duration of a mutation and readers
retry any read that overlapped one.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import deque
from contextlib import contextmanager
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Iterator
    from typing import TypeVar

    T = TypeVar("T")

__all__ = ["GracePeriod", "WriteSequence"]


class GracePeriod:
    def __init__(self):
        self._tickets = itertools.count()
        self._readers: dict[int, int] = {}
        self._epoch = 0
        self._retired: deque[tuple[int, list]] = deque()
        self._lock = threading.Lock()
        self.reclaimed = 0

    @property
    def epoch(self) -> int:
        return self._epoch

    @property
    def pending(self) -> int:
        "Number of retired nodes not yet reclaimed."
        return sum(len(nodes) for _, nodes in list(self._retired))

    def enter(self) -> int:
        ticket = next(self._tickets)
        self._readers[ticket] = self._epoch
        return ticket

    def exit(self, ticket: int) -> None:
        self._readers.pop(ticket, None)

    @contextmanager
    def reader(self) -> Iterator[int]:
        ticket = self.enter()
        try:
            yield ticket
        finally:
            self.exit(ticket)

    def retire(self, nodes: Iterable) -> None:
        nodes = list(nodes)
        if not nodes:
            return
        for node in nodes:
            node.retired = True
        with self._lock:
            self._retired.append((self._epoch, nodes))
            self._epoch += 1

    def reclaim(self) -> int:
        "Clear every retired node no active reader can still reach; return how many."
        oldest = min(list(self._readers.values()), default=None)
        count = 0
        with self._lock:
            while self._retired:
                epoch, nodes = self._retired[0]
                if oldest is not None and oldest <= epoch:
                    break
                self._retired.popleft()
                for node in nodes:
                    node.clear()
                count += len(nodes)
        self.reclaimed += count
        return count


class WriteSequence:
    """Sequence counter for optimistic reads.

    Writers hold the index's writer lock, so only the owning thread ever
    bumps the counter. Nested mutations share one odd window.
    """

    def __init__(self):
        self.value = 0
        self.retries = 0
        self._depth = 0
        self._owner: int | None = None

    @contextmanager
    def write(self) -> Iterator[None]:
        "Mark an in-place mutation. The writer lock must be held."
        self._depth += 1
        if self._depth == 1:
            self._owner = threading.get_ident()
            self.value += 1
        try:
            yield
        finally:
            self._depth -= 1
            if not self._depth:
                self._owner = None
                self.value += 1

    def read(self, fn: Callable[[], T]) -> T:
        """Call `fn` until it runs without an overlapping mutation; return its result.

        An exception raised while a mutation overlapped is treated as a torn
        read and retried; otherwise it propagates.
        """
        while True:
            seq = self.value
            if seq & 1 and self._owner != threading.get_ident():
                time.sleep(0)
                continue
            try:
                result = fn()
            except Exception:
                if self.value == seq:
                    raise
                self.retries += 1
                continue
            if self.value == seq:
                return result
            self.retries += 1
