"""Multi-camera visual-inertial sliding-window estimation."""
