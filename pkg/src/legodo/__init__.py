"""Proprioceptive leg odometry for quadrupeds.

An error-state EKF propagated by the IMU and corrected by per-leg
zero-velocity updates whose noise is scaled by a fused force/kinematic
contact-quality score.  Also ships a synthetic gait simulator, dataset I/O
and trajectory metrics.
"""

__version__ = "0.1.0"
