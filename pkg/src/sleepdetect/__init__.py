"""Joint detection of arousals, leg movements and sleep-disordered breathing
events in multichannel sleep recordings."""

__version__ = "0.1.0"
