"""H-type deviation of step-two Carnot groups."""
