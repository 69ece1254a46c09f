"""Config parsing, experiment registry, byte-stable outputs and the command line."""
