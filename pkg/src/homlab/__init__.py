"""Two-photon interference lab toolkit.

Analytic correlation model for a single-photon emitter interfered with a
weak coherent laser, Monte Carlo click-stream and coincidence generation,
and weighted nonlinear estimation of the physical parameters.
"""

from homlab.model import EmitterModel, TpiParams

__version__ = "0.1.0"

__all__ = ["EmitterModel", "TpiParams", "__version__"]
