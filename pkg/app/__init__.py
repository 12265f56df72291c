"""FEM Impute: robust mixture-model imputation of missing values."""
