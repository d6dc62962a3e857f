# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.

from __future__ import annotations

import typing as t

import pluggy

from hireindex.core import OracleMismatchError

hookimpl = pluggy.HookimplMarker("hireindex")
hookspec = pluggy.HookspecMarker("hireindex")
pm = pluggy.PluginManager("hireindex")
if t.TYPE_CHECKING:
    from hireindex.recalibration import Job, RecalibrationEngine


class HireHookspec:
    @hookspec
    def on_job_error(self, engine: RecalibrationEngine, job: Job, error: Exception) -> None:
        """Intercept a failed recalibration job for logging purposes.

        Fired before the job's snapshot is discarded and its pending updates
        are replayed against the original subtree.

        Args:
            engine:
                The engine that ran the job.
            job:
                The failed job.
            error:
                The exception raised while rebuilding.
        """

    @hookspec
    def on_job_published(self, engine: RecalibrationEngine, job: Job, elapsed: float) -> None:
        """Observe a job after its subtree was published and its log replayed.

        `elapsed` is the rebuild time in nanoseconds.
        """

    @hookspec(firstresult=True)
    def on_oracle_mismatch(self, op_index: int, op, expected, actual):
        """Handle a result that differs from the sorted-map oracle.

        Return a non-None value to swallow the mismatch.
        """


class HireDefaultsPlugin:
    @hookimpl
    def on_oracle_mismatch(self, op_index: int, op, expected, actual):
        msg = f"Oracle mismatch at op {op_index} {op=}: expected {expected!r} got {actual!r}"
        raise OracleMismatchError(msg, op_index)


pm.add_hookspecs(HireHookspec)
pm.register(HireDefaultsPlugin())
