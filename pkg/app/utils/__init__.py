"""
Remuestreo bicubico y E/S de imagenes
"""
