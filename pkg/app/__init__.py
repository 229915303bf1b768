"""
Paquete principal de DirectCapsNet (reconocimiento de muy baja resolucion)
"""
