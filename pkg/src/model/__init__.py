# Model package: backbone, heads, FCM and the cascade forward.
