"""Physics-informed tanh networks for incompressible Navier-Stokes, with
residual-based error certificates and constructive Sobolev approximants."""

import jax

# every computation in the package is carried out in double precision
jax.config.update("jax_enable_x64", True)

from .errors import (  # noqa: E402
    CheckpointError,
    ConfigError,
    HypothesisError,
    HypothesisWarning,
    NonFiniteError,
    ShapeError,
    UnsupportedOrderError,
)
from .network import NetworkParams, ThetaClass, build, forward, theta_class  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "HypothesisError",
    "HypothesisWarning",
    "NetworkParams",
    "NonFiniteError",
    "ShapeError",
    "ThetaClass",
    "UnsupportedOrderError",
    "build",
    "forward",
    "theta_class",
]
