"""gensmooth: generalized-smoothness bounds and the harness that tracks them."""
