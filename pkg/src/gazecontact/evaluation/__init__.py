"""Detection metrics, cross-validation folds, rebalancing and dataset summaries."""
