"""Path-connection repair and the comparison baselines"""
