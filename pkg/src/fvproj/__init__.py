"""Finite volume projection solver for the 2D incompressible Navier-Stokes
equations on admissible triangular meshes, with a verification suite."""

from . import (cli, config, fields, linalg, mesh, operators, output, scheme,
               verification)

__version__ = "0.1.0"

__all__ = ["cli", "config", "fields", "linalg", "mesh", "operators",
           "output", "scheme", "verification", "__version__"]
