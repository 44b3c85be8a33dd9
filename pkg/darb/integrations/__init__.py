# Integrations package
