from __future__ import annotations  # noqa: INP001

extensions = ["myst_parser"]

master_doc = "index"
source_suffix = ".md"

# General information about the project.
project = "hireindex"
author = "hireindex contributors"

exclude_patterns = []
highlight_language = "python"
pygments_style = "sphinx"

html_theme = "pydata_sphinx_theme"
