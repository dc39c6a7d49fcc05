"""Planning bar-structure construction: sequence search, structural checks and robot motion."""
