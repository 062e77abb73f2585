# sparsekit: sparse recovery toolkit

__version__ = "1.0.0"
