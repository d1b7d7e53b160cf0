# Output models and the invariant suite behind diagnose
