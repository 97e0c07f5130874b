"""Datasets: synthetic glyphs, IDX ingestion, triggers, poisoning, bonafide splits"""
