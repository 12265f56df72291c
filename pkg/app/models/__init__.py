"""Domain types: datasets, mixtures, synthetic specs and experiment records."""
