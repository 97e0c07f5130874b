"""Shared module initialization"""
