"""
Test suite for quadnpmle.
"""
