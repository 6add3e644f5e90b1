"""Urban footprint extraction from scanned topographic maps with a two-pass U-Net."""

__version__ = "0.1.0"
