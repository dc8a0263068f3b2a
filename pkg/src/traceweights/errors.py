"""Error taxonomy shared across the package.

NumericalError marks failures of the math itself (divergence, rank
collapse, non-finite values) as opposed to bad inputs or configs; the
CLI maps the two families to different exit codes.
"""

from __future__ import annotations

__all__ = ["NumericalError"]


class NumericalError(ValueError):
    pass
