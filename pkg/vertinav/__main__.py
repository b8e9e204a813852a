"""``python -m vertinav``."""

import sys

from vertinav.cli import main

if __name__ == "__main__":
    sys.exit(main())
