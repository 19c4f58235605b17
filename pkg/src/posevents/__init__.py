"""Motion event timing from 2D pose sequences.

Turns per-frame person detections with pose estimates into precise motion
event timestamps: single-athlete tracking, rule-based swim-start events, and
a trainable temporal convolutional model for stride events, plus a synthetic
motion oracle and an evaluation suite.
"""

__version__ = "0.1.0"
