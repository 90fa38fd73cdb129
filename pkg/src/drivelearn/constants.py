"""Shared physical constants of the simulation."""

# Global simulation timestep in seconds. The 2-second ego history block
# (20 steps) and all track logs assume this value.
DT = 0.1

# Hard cap on the longitudinal shift per step, meters. 2.0 m/step = 72 km/h,
# deliberately above the 50 km/h progress-bonus knee so exploration is not
# clamped at the reward saturation point.
DS_CAP = 2.0

# Longitudinal shift corresponding to 50 km/h over one step; the progress
# bonus saturates here.
DS_MAX_REWARD = 1.389
