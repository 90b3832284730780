"""Console entry point."""
from __future__ import annotations

import sys

from .harness import run


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
