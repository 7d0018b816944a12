# Losses package: focal, smooth-L1 and cascade totals.
