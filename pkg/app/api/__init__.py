"""HTTP routers for the imputation service."""
