"""Two-dimensional Lorentz gases: billiard map, tangent dynamics, singularities and recurrence."""

__version__ = "0.1.0"
