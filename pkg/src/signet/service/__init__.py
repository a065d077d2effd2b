"""HTTP facade over the pipeline: request/response models and the app."""
