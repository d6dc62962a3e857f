# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

if __name__ == "__main__":
    from hireindex.scripts import launch_bench

    launch_bench()
