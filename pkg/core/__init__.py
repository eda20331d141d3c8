"""taulab core: configuration models, errors and reference presets."""

__version__ = "0.1.0"
