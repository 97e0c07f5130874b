"""Parametric curves in weight space and curve training"""
