# bh-depletion-sim
# Pseudoclassical simulator for the open Bose-Hubbard chain with single-site loss

# Single source of truth for the tool version.
# When bumping, update this AND `pyproject.toml` to the same value.
__version__ = "1.0.0"
