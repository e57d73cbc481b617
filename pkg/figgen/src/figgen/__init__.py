"""Publication-style figures from harness CSV outputs."""

from .csvdata import (
    CONVERGENCE_HEADER,
    GRID_HEADER,
    REGION_HEADER,
    Region,
    Series,
    read_convergence,
    read_problem_grid,
    read_region,
)
from .errors import DataError, FigureError, SpecError
from .render import (
    convergence_figure,
    problem_panel_figure,
    render,
    render_convergence,
    render_problem_panel,
    render_stability,
    stability_figure,
)
from .spec import KINDS, FigureSpec, load_spec, parse_spec

__version__ = "0.1.0"

__all__ = [
    "CONVERGENCE_HEADER",
    "GRID_HEADER",
    "REGION_HEADER",
    "Region",
    "Series",
    "read_convergence",
    "read_problem_grid",
    "read_region",
    "DataError",
    "FigureError",
    "SpecError",
    "convergence_figure",
    "problem_panel_figure",
    "render",
    "render_convergence",
    "render_problem_panel",
    "render_stability",
    "stability_figure",
    "KINDS",
    "FigureSpec",
    "load_spec",
    "parse_spec",
    "__version__",
]
