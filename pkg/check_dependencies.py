#!/usr/bin/env python3
"""Report which Py-TeFS dependencies are importable; exits non-zero if any is missing."""

import importlib.metadata
import importlib.util
import sys

MIN_PYTHON = (3, 9)

# group -> (import name, distribution name)
REQUIREMENTS = {
    'runtime': [('numpy', 'numpy'), ('scipy', 'scipy'), ('tqdm', 'tqdm')],
    'test': [('pytest', 'pytest')],
}


def installed_version(module_name, distribution):
    """Version string of an importable module, None when it cannot be found."""
    if importlib.util.find_spec(module_name) is None:
        return None
    try:
        return importlib.metadata.version(distribution)
    except importlib.metadata.PackageNotFoundError:
        return 'unknown version'


def check_group(name, modules):
    print(f"{name.capitalize()} dependencies:")
    missing = []
    for module_name, distribution in modules:
        version = installed_version(module_name, distribution)
        print(f"  {module_name.ljust(12)} {'✗ missing' if version is None else '✓ ' + version}")
        if version is None:
            missing.append(distribution)
    return missing


def main():
    print(f"Python {sys.version.split()[0]}")
    if sys.version_info[:2] < MIN_PYTHON:
        print(f"Warning: Py-TeFS needs Python {'.'.join(map(str, MIN_PYTHON))} or newer.")

    missing = []
    for name, modules in REQUIREMENTS.items():
        missing += check_group(name, modules)
    if missing:
        print(f"\nMissing: {' '.join(missing)}")
        print("Install with `conda env create -f environment.yml` or `pip install -r requirements.txt`.")
        return 1
    print("\nAll dependencies are installed.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
