# This makes 'estimators' a Python package.
