"""Numerical services: linear algebra, fitters, generators, benchmark and I/O."""
