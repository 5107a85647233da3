"""Align sparse panorama scans to a floorplan raster through a discrete MRF."""

__version__ = "0.1.0"
