#!/usr/bin/env python3
"""
Setup script for Py-TeFS.

This script allows packaging Py-TeFS as a Python package.
"""

from setuptools import setup, find_packages

# Read the content of README.md
with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

# Read requirements
with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="py-tefs",
    version="1.0.0",
    description="Temporal-controlled frame swap stereo capture simulator and trajectory evaluation toolkit",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["index"],
    include_package_data=True,
    package_data={
        "py_tefs": ["resources/scenarios/*.json"],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "py-tefs=index:main",
        ],
    },
)
