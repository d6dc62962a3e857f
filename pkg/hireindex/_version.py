# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
__version__ = "0.1.0"
