"""Sub-pixel corneal reflection localization trained on synthetic images."""

__version__ = "0.1.0"
