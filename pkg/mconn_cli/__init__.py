"""Command-line surface, scenario configuration and artifact persistence"""
