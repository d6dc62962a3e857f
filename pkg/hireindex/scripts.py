# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import sys


def launch_bench():
    from hireindex.bench import BenchApp

    sys.exit(BenchApp.launch_instance())
