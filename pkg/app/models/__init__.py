"""
Esquemas Pydantic y la red DirectCapsNet
"""
