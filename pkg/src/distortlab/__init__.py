"""Numerical toolkit for boundary distortion of planar mappings with
integrable distortion: maps and their distortion fields, conformal maps
onto cusp domains, discrete path-family modulus, scaling exponents and
dimension estimates of compression sets."""

__version__ = "0.1.0"
