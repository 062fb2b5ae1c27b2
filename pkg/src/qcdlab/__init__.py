"""qcdlab: CUSUM quickest change detection with large-deviations cost approximations."""

__version__ = "0.1.0"
