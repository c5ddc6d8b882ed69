"""Vertebra detection, level labelling and scoliosis features for sagittal spine scans."""

__version__ = "0.1.0"
