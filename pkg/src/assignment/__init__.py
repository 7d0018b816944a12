# Assignment package: per-stage IoU label assignment.
