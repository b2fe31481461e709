#!/usr/bin/env python3
"""Command-line entry point: ``python main.py {kernel,classify,sweep,generate} ...``"""
import sys

from dkm.app import main

if __name__ == "__main__":
    sys.exit(main())
