"""Backward SDEs driven by a Brownian motion and finitely many marked jumps.

The jump filtration is peeled off layer by layer: between consecutive jumps
the problem is a plain Brownian backward SDE indexed by the realized jump
history, the layers are solved from the last jump backwards, and gluing them
along the realized scenario recovers the jump solution. Applications: option
pricing and hedging across default-type events, and exponential utility
maximization with power traded away at jumps.
"""

from .grids import MarkGrid, TimeGrid
from .jump_model import (
    DensityModel,
    IntensityTable,
    MarkedJumpSample,
    compensator_check,
    exponential_model,
    intensity,
    intensity_curve,
    load_tabulated_csv,
    marginal_gamma,
    product_exponential_model,
    sample_jump_batch,
    sample_jumps,
    tabulated_model,
)

__version__ = "0.1.0"
