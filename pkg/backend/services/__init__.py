"""Domain services for the knowledge tracing engine"""
