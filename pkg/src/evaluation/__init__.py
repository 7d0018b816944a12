# Evaluation package: COCO-style AP and confidence/IoU correlation.
