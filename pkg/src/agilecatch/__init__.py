"""Agile catching sandbox: a deterministic 7-DOF kinematic simulator with two
catching agents — a free-end-time trajectory optimizer and a blackbox-trained
neural policy — plus the experiment harness used to compare them."""

__version__ = "0.1.0"
