"""
Comandos typer: train, eval, gradcheck, mcnemar, synth y recon
"""
