"""Object counting over gridded regions by importance sampling from
covariate-derived proposals."""

__version__ = "0.1.0"
