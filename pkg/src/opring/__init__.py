"""opring: partition transactional operations, replicate them over a
token ring, and verify the recorded histories."""

__version__ = "0.1.0"
