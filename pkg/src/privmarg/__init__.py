"""Private release of k-way marginals through low-weight polynomial approximations of OR."""

__version__ = "0.1.0"
