"""All-optical spin-qubit rotations mediated by microcavity exciton-polaritons."""

__version__ = "0.1.0"
