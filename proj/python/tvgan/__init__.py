"""Thermal-to-visible face translation with an identity-preserving GAN."""

from ._core import (
    Error,
    InputError,
    NumericalError,
    TransformModel,
    cmc_curve,
    content_hash,
    cosine_distance,
    discriminator_adv_loss,
    generator_adv_loss,
    identity_loss_discriminator,
    identity_loss_generator,
    l1_loss,
    load_model,
    mse_loss,
    plain_model,
    rank_of_query,
    run_cli,
    synthesize_toy_dataset,
    tvgan_generator_total,
)

__all__ = [
    "Error",
    "InputError",
    "NumericalError",
    "TransformModel",
    "cmc_curve",
    "content_hash",
    "cosine_distance",
    "discriminator_adv_loss",
    "generator_adv_loss",
    "identity_loss_discriminator",
    "identity_loss_generator",
    "l1_loss",
    "load_model",
    "mse_loss",
    "plain_model",
    "rank_of_query",
    "run_cli",
    "synthesize_toy_dataset",
    "tvgan_generator_total",
]


def main():
    import sys

    status, out, err = run_cli(sys.argv[1:])
    sys.stdout.write(out)
    sys.stderr.write(err)
    raise SystemExit(status)
