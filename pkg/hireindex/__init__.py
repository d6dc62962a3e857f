# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

from hireindex._version import __version__

__all__ = [
    "__version__",
    "AuditReport",
    "CostModelParams",
    "Entry",
    "HireError",
    "HireIndex",
    "IndexParams",
    "JobKind",
    "KEY_MAX",
    "BaselineBTree",
    "bulk_load",
    "hookimpl",
]

from hireindex.btree import BaselineBTree
from hireindex.core import KEY_MAX, CostModelParams, Entry, HireError, IndexParams
from hireindex.hookspecs import hookimpl
from hireindex.recalibration import JobKind
from hireindex.tree import AuditReport, HireIndex, bulk_load
