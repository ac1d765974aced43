"""test files"""
