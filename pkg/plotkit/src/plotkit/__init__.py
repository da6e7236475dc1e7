"""Figure rendering for tracerlab CSV outputs.

Pure file-to-file transformation: reads the documented report/bracket CSV
schemas, never recomputes any physics, and writes deterministic images
(fixed size and dpi).
"""

__version__ = "0.1.0"

from .render import FigureSpec, SchemaError, render  # noqa: F401
