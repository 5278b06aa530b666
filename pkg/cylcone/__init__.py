"""cylcone: numerics for minimal hypersurfaces with cylindrical tangent cones."""
__version__ = "0.1.0"
