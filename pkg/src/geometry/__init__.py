# Geometry package: boxes, anchors, NMS.
