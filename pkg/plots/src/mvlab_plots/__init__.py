"""Batch figure rendering for mvlab run directories.

Consumes only the documented CSV artifacts (never solver internals), so the
simulation suite runs without this package installed.
"""

__version__ = "0.1.0"
