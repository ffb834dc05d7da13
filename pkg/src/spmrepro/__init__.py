"""Multichannel FIR control-filter design for loudspeaker-array sound field
reproduction with a beamformed spatial-power-map constraint."""

__version__ = "0.1.0"
