"""
quadnpmle - NPMLE for exponential family mixtures with quadrature compression
"""

__version__ = "0.3.0"
__author__ = "quadnpmle contributors"
