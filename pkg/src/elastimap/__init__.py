"""Active tactile mapping of surface deformability in a synthetic world.

The package couples a Gaussian-random-field surface model (`gprf`), a
meshless shape-matching deformation solver (`msm`), residual-minimizing
deformability estimation (`estimator`), a synthetic scenario/sensor/probe
world (`world`), and a variance-driven exploration loop (`explorer`).
The `cli` subpackage runs config-driven experiments and exports fields,
reports, and figures.
"""

from . import cli, estimator, explorer, gprf, msm, studies, world
from .errors import ElastimapError

__version__ = "0.1.0"

__all__ = [
    "ElastimapError",
    "__version__",
    "cli",
    "estimator",
    "explorer",
    "gprf",
    "msm",
    "studies",
    "world",
]
