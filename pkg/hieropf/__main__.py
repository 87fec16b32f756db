"""Entry point for running the package with python -m hieropf."""

import sys

from hieropf.app import main

if __name__ == "__main__":
    sys.exit(main())
