"""
Main entry point for the leaky sandpile toolkit.
"""
import sys
from .cli import main

if __name__ == "__main__":
    sys.exit(main())
