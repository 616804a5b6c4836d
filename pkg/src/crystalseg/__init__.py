"""Segmentation and defect classification of crystalline nanoparticles in HRTEM micrographs."""

__version__ = "0.1.0"
