"""Distributionally robust bounds over optimal-transport balls."""
