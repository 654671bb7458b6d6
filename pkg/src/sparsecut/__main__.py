from sparsecut.cli import entrypoint

entrypoint()
