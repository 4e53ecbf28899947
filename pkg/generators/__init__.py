# Generators package