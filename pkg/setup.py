#!/usr/bin/env python3
"""
Packaging for the Whisper Prompt Toolkit. Installs the `wpt` console script.

For a checkout without installing, use ./wpt.sh.
"""

from pathlib import Path

from setuptools import find_packages, setup

HERE = Path(__file__).parent


def read_requirements():
    lines = (HERE / "requirements.txt").read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip() and not line.startswith("#")]


DEV_REQUIREMENTS = {"pytest", "black", "flake8", "mypy"}

requirements = read_requirements()

setup(
    name="whisper-prompt-toolkit",
    version="0.3.0",
    description="Prompt adaptation, constrained decoding and evaluation for Whisper-style decoders",
    long_description=(HERE / "README.md").read_text(encoding="utf-8"),
    long_description_content_type="text/markdown",
    python_requires=">=3.8",
    packages=find_packages(include=["src", "src.*"]),
    package_data={"src": ["templates/*.yaml", "templates/variants/*.yaml"]},
    install_requires=[req for req in requirements if req.split(">=")[0] not in DEV_REQUIREMENTS],
    extras_require={"dev": [req for req in requirements if req.split(">=")[0] in DEV_REQUIREMENTS]},
    entry_points={"console_scripts": ["wpt=src.cli.main:main"]},
)
