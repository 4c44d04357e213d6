"""H-matrix preconditioners for the time-harmonic Maxwell curl-curl system
discretised with lowest-order Nedelec elements."""

__version__ = "0.1.0"
