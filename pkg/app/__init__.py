"""Refinery: raffinatore avversariale di immagini sintetiche e banco di prova su scala desktop"""
