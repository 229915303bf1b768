"""
Capas, capsulas, perdidas y optimizador sobre el motor de autodiferenciacion
"""
