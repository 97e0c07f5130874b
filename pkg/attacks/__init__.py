"""Evasion, error-injection and path-aware adaptive attacks"""
