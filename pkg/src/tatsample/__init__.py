"""Time-domain photoacoustic sampling, aliasing prediction and reconstruction."""
