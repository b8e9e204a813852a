"""
vertinav - Unit Tests
"""
