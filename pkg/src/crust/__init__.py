"""Generate-and-check C to Rust translation with differential fuzzing oracles."""

__version__ = "0.1.0"
