"""Feed-forward network engine: layers, exact gradients, SGD training"""
