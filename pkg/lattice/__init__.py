# This makes 'lattice' a Python package.
