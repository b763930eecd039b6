"""Entry point for ``trc`` and ``python -m temporal_rules``."""

from __future__ import annotations

import sys

from temporal_rules.cli import run


def main() -> None:
    """CLI entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
