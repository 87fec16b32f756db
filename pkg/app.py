"""
hieropf: command-line launcher.
Run with: python app.py solve --case tests/fixtures/case14.m --scheme centralized
"""

import sys

from hieropf.app import main

if __name__ == "__main__":
    sys.exit(main())
