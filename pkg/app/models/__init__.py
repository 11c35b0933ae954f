"""Configuration and trace schemas."""
