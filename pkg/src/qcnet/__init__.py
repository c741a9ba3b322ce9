"""Supervised classification by steady-state quantum transport on trained networks."""
