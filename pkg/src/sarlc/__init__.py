"""Seasonal SAR feature synthesis and land-cover classification toolkit."""

__version__ = "0.1.0"
