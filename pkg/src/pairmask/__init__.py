"""Desk-scale masked pre-training on paired medical images and reports."""

__version__ = "0.1.0"
