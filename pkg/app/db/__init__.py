"""
Persistencia en disco: documentos YAML y checkpoints
"""
