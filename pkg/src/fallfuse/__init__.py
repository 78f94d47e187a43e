"""fallfuse: wrist-accelerometer + two-camera fall detection with a numpy CNN engine."""

__version__ = "0.1.0"
