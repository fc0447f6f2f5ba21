"""Training and static-quantization pipeline for the wobble-board exercise network."""
