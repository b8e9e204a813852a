#!/usr/bin/env python3
"""Start the vertinav command line."""

import sys

from vertinav.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
