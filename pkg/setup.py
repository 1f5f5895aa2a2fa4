#!/usr/bin/env python3
"""
Setup script for feel-csi-feedback
Kept for older pip versions; the package metadata lives in pyproject.toml.
"""

from setuptools import setup

setup()
