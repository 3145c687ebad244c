"""
The estimator and its cost
==========================

Two convolutional stems (PPG and accelerometer) feed a cross-attention layer
where PPG features query accelerometer features; a small dense head maps the
result to BPM. The autoencoder used for pre-training shares the encoder and
adds a mirrored decoder with skip connections.
"""

import torch

from ppgssl.model import AUTOENCODER, ModelConfig, build_autoencoder, build_estimator, count_macs, count_params, describe

est = build_estimator(ModelConfig())
print(describe(est))

legacy = build_estimator(ModelConfig.legacy())
print(f"\nlegacy (kernel 5, dilation 2): {count_params(legacy):,} params, {count_macs(legacy) / 1e6:.1f}M MACs")
print("same receptive span:", ModelConfig().receptive_span == ModelConfig.legacy().receptive_span)

ae = build_autoencoder(ModelConfig(variant=AUTOENCODER))
x = torch.randn(2, 4, 256)
print(f"\nautoencoder {tuple(x.shape)} -> {tuple(ae(x).shape)}, {count_params(ae):,} params")
