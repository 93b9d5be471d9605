"""Nonstationarity diagnostics for irregularly spaced spatial data."""
