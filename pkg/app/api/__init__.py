"""
Superficie de linea de comandos
"""
