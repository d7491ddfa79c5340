"""Target generation, collision constraints and tracking MPC."""
