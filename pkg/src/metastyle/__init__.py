"""Fast style adaptation of a differentiable avatar via Reptile meta-learning."""

__version__ = "0.1.0"
