"""Structure-preserving P1 finite elements for the nonisothermal Cahn-Hilliard-Navier-Stokes system."""

__version__ = "0.1.0"
