# Lyapunov Invariant Verification API
# Graph models of numerical programs certified by convex Lyapunov invariants

__version__ = "1.0.0"
__description__ = "Verification of numerical programs via Lyapunov invariants and convex relaxations"
