"""
Servicios: datos, entrenamiento, evaluacion, reconstruccion y gradcheck
"""
