"""Commuting time and transit accessibility from mobile-network anchors.

Modules
-------
ingest      event parsing, hourly binning, active-user filter
anchors     home/work tower detection
geo         projection, Voronoi coverage, hexagon grid and disaggregation
router      walk + transit network, RAPTOR, travel-time matrices
access      commute means, cumulative opportunities, Palma, Gini, quartiles
spatial     hexagon contiguity and bivariate local Moran's I
groupstats  Kruskal-Wallis, Dunn/Holm-Sidak, multinomial logit
synth       synthetic city generator
pipeline    cached end-to-end run
"""

__version__ = "0.1.0"
