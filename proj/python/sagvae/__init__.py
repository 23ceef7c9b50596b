"""SAG-VAE: joint variational inference of data representations and a
latent feature-relation graph, with a self-attention graph decoder."""

from ._sagvae import (
    Model,
    edge_prf,
    gen_karate,
    gumbel_softmax_sample,
    kl_edge,
    kl_gaussian_std,
    load_idx,
    masked_softmax,
    normalize_adjacency,
    pairwise_product_baseline,
    perturb_uniform,
)

__all__ = [
    "Model",
    "edge_prf",
    "gen_karate",
    "gumbel_softmax_sample",
    "kl_edge",
    "kl_gaussian_std",
    "load_idx",
    "masked_softmax",
    "normalize_adjacency",
    "pairwise_product_baseline",
    "perturb_uniform",
]
