"""Datacenter PDU power modeling: simulation, cleaning, models, evaluation."""

__version__ = "0.1.0"
