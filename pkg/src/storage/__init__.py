# Storage package: checkpoint format and atomic artifact writes.
