"""Simulation and verification toolkit for normal approximation of
functionals of random geometric graphs built on Poisson point processes."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ArgumentError,
    CapacityError,
    DegenerateInputError,
    IntegrationError,
    NumericError,
    RGGError,
)
from .geometry import ConeCover, ConvexBody, cone_cover  # noqa: E402
from .sampling import MarkedPointConfig, RngStream, add_point, sample_poisson  # noqa: E402
from .graphs import GeometricGraph, build_graph  # noqa: E402
from .functionals import FunctionalSpec, add_one_cost_fast, add_one_cost_oracle, evaluate  # noqa: E402

__all__ = [
    "ArgumentError",
    "CapacityError",
    "ConeCover",
    "ConvexBody",
    "DegenerateInputError",
    "FunctionalSpec",
    "GeometricGraph",
    "IntegrationError",
    "MarkedPointConfig",
    "NumericError",
    "RGGError",
    "RngStream",
    "add_one_cost_fast",
    "add_one_cost_oracle",
    "add_point",
    "build_graph",
    "cone_cover",
    "evaluate",
    "sample_poisson",
]
