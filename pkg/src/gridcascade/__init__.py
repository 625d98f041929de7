"""Cascade simulation, influence-model training and advisory tools for transmission grids."""
