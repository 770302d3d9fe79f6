"""Monocular-to-panoramic navigation perception workbench."""
