"""Loss-landscape analyses along weight-space paths"""
