# Engines package