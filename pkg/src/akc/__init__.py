"""Approximation-by-conjugation constructions on odd-dimensional spheres.

Modules
-------
sphere            coordinates, circle action, sampling, sup distances
translations      axis maps and invariant twists
transitivity      two-coordinate solver and transitivity of the axes
equidistribution  statistical distribution and transversality tests
chain             symbolic map chains and conjugated rotations
engine            inner induction and outer loop
verification      verification batteries
manifest          run manifests and stage records
cli               command line interface
"""
__version__ = "0.1.0"
