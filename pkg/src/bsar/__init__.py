"""Spatial lag probit estimators."""
