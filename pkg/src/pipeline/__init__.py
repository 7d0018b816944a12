# Pipeline package: synthetic data, training and inference.
