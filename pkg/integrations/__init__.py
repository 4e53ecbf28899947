# Integrations package