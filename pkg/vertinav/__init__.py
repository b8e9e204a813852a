"""vertinav - vertiport approach navigation requirements, subsystems and simulation."""

__version__ = "1.0.0"
