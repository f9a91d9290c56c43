# Microgrid co-simulation package
