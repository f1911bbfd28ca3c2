"""In-vehicle telematics analysis for older drivers: stream parsing, trip
segmentation, driver behavior indexes, preprocessing and a from-scratch
random forest for MCI status."""

__version__ = "0.1.0"
