"""Compute the first Neumann eigenvectors of an icosphere and dump them in the binary layout.

Usage: python demos/dump_eigenvectors.py OUT.bin [--subdiv N] [--count K]
"""

import argparse

import numpy as np

from hmbounds.mesh import SurfaceSpec, build_surface
from hmbounds.spectral import assemble_fem, neumann_spectrum, read_eigenvectors, write_eigenvectors


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out")
    p.add_argument("--subdiv", type=int, default=3)
    p.add_argument("--count", type=int, default=8)
    args = p.parse_args()
    mesh = build_surface(SurfaceSpec("icosphere", {"subdiv": args.subdiv}))
    spec = neumann_spectrum(assemble_fem(mesh), args.count)
    write_eigenvectors(args.out, spec)
    assert np.array_equal(read_eigenvectors(args.out), spec.eigenvectors)
    print(spec.to_json())


if __name__ == "__main__":
    main()
