"""
Configuracion de proceso y jerarquia de errores
"""
