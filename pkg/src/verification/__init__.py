# Verification package: gradient and property suites behind the CLI.
