"""Allow ``python -m quadnpmle``."""

import sys

from quadnpmle.cli import main

if __name__ == "__main__":
    sys.exit(main())
