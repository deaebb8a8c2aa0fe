#!/usr/bin/env python3
"""
Launcher for the quadnpmle command line
Usage: python run.py <command> [options]
"""

import sys
from pathlib import Path


def main() -> int:
    script_dir = Path(__file__).parent
    if not (script_dir / "quadnpmle" / "cli.py").exists():
        print("❌ Error: quadnpmle/cli.py not found!", file=sys.stderr)
        return 1

    # Check the numeric stack is importable
    missing = []
    for module in ("numpy", "scipy", "dotenv"):
        try:
            __import__(module)
        except ImportError:
            missing.append(module)
    if missing:
        print(f"❌ Missing packages: {', '.join(missing)}", file=sys.stderr)
        print("   Install them with: pip install -e .", file=sys.stderr)
        return 1

    if not (script_dir / ".env").exists():
        print("⚠️  .env file not found, using default values", file=sys.stderr)

    sys.path.insert(0, str(script_dir))
    from quadnpmle.cli import main as cli_main

    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
