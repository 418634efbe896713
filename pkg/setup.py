#!/usr/bin/env python3
# vim: set sw=4 et:
from setuptools import setup, find_packages

__version__ = "0.1.0"

def load_requirements(filename):
    with open(filename, "rt") as fh:
        return fh.read().rstrip().split("\n")

def long_description():
    with open("README.md") as f:
        return f.read()

setup(
    name="mlact",
    version=__version__,
    license="Apache 2.0",
    packages=find_packages(exclude=["tests"]),
    description="Multi-label action learning and interpretation tools",
    long_description=long_description(),
    long_description_content_type="text/markdown",
    install_requires=load_requirements("requirements.txt"),
    python_requires=">=3.8",
    zip_safe=True,
    setup_requires=["pytest-runner"],
    entry_points="""
        [console_scripts]
        mlact = mlact.main:main
    """,
)
