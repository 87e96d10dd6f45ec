"""Neural-network BSDE engine for CVA/XVA exposure simulation.

Per-time-step networks learn the Deltas of a deflated portfolio value under
Hull-White rates and lognormal FX; exposures and credit adjustments follow
from the learned value surfaces.
"""

__version__ = "0.1.0"
