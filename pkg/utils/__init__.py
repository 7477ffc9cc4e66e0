"""
Configuration, validation and exception helpers for qnprec.
"""
