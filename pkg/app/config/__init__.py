# Configuration package for FEM Impute
