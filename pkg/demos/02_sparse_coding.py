"""Iterated convolutional sparse coding.

Each step refines a sparse code so that decoding it reconstructs the image;
soft thresholding keeps most coefficients at exactly zero. A trained model
learns dictionary scales that make the iteration contract; here we normalize
a random dictionary by hand to get the same effect.
"""

import torch

from ssmreg.sparse import ConvDictionary, lcsc_step, soft_threshold

torch.manual_seed(0)

print("soft threshold: ST(0.8, 0.5) =",
      float(soft_threshold(torch.tensor(0.8), torch.tensor(0.5))))
print("soft threshold: ST(-0.2, 0.5) =",
      float(soft_threshold(torch.tensor(-0.2), torch.tensor(0.5))))

d = ConvDictionary(image_channels=1, code_channels=16, k=3, tied=True)

# power iteration for the operator norm of encode(decode(.)), then rescale the
# shared weight so the iteration is a contraction
z = torch.randn(1, 16, 32, 32)
with torch.no_grad():
    for _ in range(20):
        z = d.enc(d.dec(z))
        lam = z.norm()
        z = z / lam
    d.enc.weight /= float(lam.sqrt()) * 1.05
    d.theta_raw.fill_(-4.0)  # softplus(-4) ~ 0.018: a light threshold

x = torch.rand(1, 1, 32, 32)
z = torch.zeros(1, 16, 32, 32)
for it in range(8):
    z = lcsc_step(z, x, d)
    err = float((d.decode(z) - x).pow(2).mean())
    frac0 = float((z == 0).float().mean())
    print(f"iteration {it}: recon mse {err:.5f}, {100 * frac0:.1f}% of code exactly zero")

# with tied weights the decoder is the exact adjoint of the encoder
a = torch.randn(1, 1, 16, 16)
b = torch.randn(1, 16, 16, 16)
lhs = float((d.encode(a) * b).sum())
rhs = float((a * d.decode(b)).sum())
print("tied adjoint identity <enc(a), b> == <a, dec(b)>:",
      abs(lhs - rhs) < 1e-4, f"({lhs:.4f} vs {rhs:.4f})")
