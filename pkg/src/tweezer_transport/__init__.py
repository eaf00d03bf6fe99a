"""Minimal-time optimal transport of atoms between optical traps in phase space."""
