"""gbtopo: differentiable curvature and topology estimation for point clouds."""

__version__ = "0.1.0"
