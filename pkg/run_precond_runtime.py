#!/usr/bin/env python3
"""
Quick launcher script for the Shadow Preconditioner Runtime.

Checks the interpreter and numpy before handing the command line to
precond_runtime.main.
"""

import sys
from pathlib import Path


def check_python_version():
    """Check if Python version meets requirements."""
    if sys.version_info < (3, 8):
        print("Error: Python 3.8 or higher is required.", file=sys.stderr)
        print(f"Current version: Python {sys.version}", file=sys.stderr)
        return False
    return True


def check_numpy():
    """Check if numpy is available."""
    try:
        import numpy  # noqa: F401
        return True
    except ImportError:
        print("Error: numpy is not available.", file=sys.stderr)
        print("Install the requirements: pip install -r requirements.txt", file=sys.stderr)
        return False


def main():
    """Main launcher function."""
    if not check_python_version() or not check_numpy():
        return 1

    project_root = Path(__file__).parent
    sys.path.insert(0, str(project_root))

    try:
        from precond_runtime.main import main as app_main
        return app_main(sys.argv[1:])

    except ImportError as e:
        print(f"Error: Failed to import runtime modules: {e}", file=sys.stderr)
        return 1

    except KeyboardInterrupt:
        print("\nInterrupted by user.", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
