"""Run the built-in scenario registry and write JSON, CSV and markdown reports.

Usage: python demos/run_registry.py [OUTDIR] [--jobs N]
"""

import argparse
import pathlib

from hmbounds.cli import emit_report, run
from hmbounds.scenarios import REGISTRY


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("outdir", nargs="?", default="registry-report")
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()
    out = pathlib.Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = run(list(REGISTRY), jobs=args.jobs)
    for fmt, suffix in (("json", "json"), ("csv", "csv"), ("markdown", "md")):
        emit_report(manifest, fmt, out / f"manifest.{suffix}")
    print(f"{len(manifest.rows)} rows, {len(manifest.violations)} violated, "
          f"{len(manifest.failures)} failed -> {out}/")
    return 0 if manifest.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
