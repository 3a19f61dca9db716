"""
Root conftest. pytest imports it in the default prepend import mode, which
inserts this directory into sys.path, so tests/ can import precond_runtime
without installing it. tests/ is not a package, so nothing else puts the
repository root on the path.
"""
