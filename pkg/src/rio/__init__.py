"""Multi-radar inertial odometry."""
