"""Singular mean-field particle systems: simulation, PDE solver, estimators and bounds."""
import os as _os

# skip the TBB probe (the installed TBB is too old and only triggers a warning);
# set through the environment so numba is not imported before the CLI picks a thread count
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
