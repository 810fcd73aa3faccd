"""dgcns: interior-penalty dG solver for chemotaxis coupled to incompressible flow."""

__version__ = "0.1.0"
