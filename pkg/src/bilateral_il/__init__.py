"""Simulated 4-channel bilateral teleoperation and F2FL imitation learning."""

__version__ = "0.1.0"

DOF = 8
GRIPPER = 7
