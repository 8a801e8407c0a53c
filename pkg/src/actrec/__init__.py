"""Trip-purpose recognition for GPS stop points.

Stops are described by temporal, spatial, POI-context, transition, confidence,
distance and duration features, classified by tree ensembles trained on user
populations (everyone, one gender, one age band, one user), and the population
decisions are fused by weighted majority voting or stacking.
"""

__version__ = "0.1.0"
