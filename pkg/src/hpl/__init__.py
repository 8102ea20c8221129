"""hpl: a numerical laboratory for phase transitions of community
detection on random hypergraphs and of broadcasting on hypertrees."""

__version__ = "0.1.0"
