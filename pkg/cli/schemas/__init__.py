# Experiment config schemas
