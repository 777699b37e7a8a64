"""Conservative neural bounding of occupancy indicators, with classic baselines."""

from .indicator import GridIndicator, ProceduralIndicator, load_grid, save_grid
from .query import QueryOracle, QueryType, Region

__version__ = "0.1.0"
