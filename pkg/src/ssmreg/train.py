"""Two-stage training driver.

Stage 1 fits the guidance network on aligned pairs with the reconstruction
objective. Stage 2 trains the registration model with the guidance network
frozen; its content maps are precomputed once per dataset and enter the
guidance loss as constants, so no gradient can reach the frozen weights.

Stage 2 never reads label files: the pair loader touches only image and mask
paths, and labels are not an argument anywhere in this module.
"""

from __future__ import annotations

import hashlib
import random
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, config_digest, save_config
from .data import load_image
from .errors import ConfigError
from .flow import warp
from .losses import (guidance_loss, guidance_recon_loss, recon_loss, sim_loss,
                     smooth_loss, total_loss)
from .models import GuidanceNet, RegistrationModel
from .roi import load_mask

CHECKPOINT_VERSION = 1


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def poly_lr(base_lr: float, epoch: int, total_epochs: int,
            power: float = 0.9) -> float:
    """Polynomial decay to zero: full rate at epoch 0, floor 0 at the end."""
    frac = min(max(epoch / max(total_epochs, 1), 0.0), 1.0)
    return base_lr * (1.0 - frac) ** power


def _to_tensor(arr: np.ndarray) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    return t[None] if t.dim() == 2 else t.permute(2, 0, 1)


def load_pair_arrays(records, cfg: TrainConfig) -> dict:
    """Stack a record list into batched tensors.

    Reads images and (when the config asks for them) ROI masks; label paths
    are never opened here.
    """
    movs, fixs, mask_m, mask_f = [], [], [], []
    H, W = cfg.image_size
    for r in records:
        mov = _to_tensor(load_image(r.moving_path, channels=cfg.channels))
        fix = _to_tensor(load_image(r.fixed_path, channels=cfg.channels))
        if mov.shape[-2:] != (H, W) or fix.shape[-2:] != (H, W):
            raise ConfigError(
                f"pair {r.plant_id} is {tuple(mov.shape[-2:])}, config wants {(H, W)}")
        movs.append(mov)
        fixs.append(fix)
        if cfg.use_roi_mask:
            for path, dst in ((r.moving_mask_path, mask_m),
                              (r.fixed_mask_path, mask_f)):
                if not path or not Path(path).is_file():
                    raise ConfigError(
                        f"config requires ROI masks but {path!r} is missing")
                dst.append(torch.from_numpy(
                    load_mask(path).astype(np.float32))[None])
    out = {"moving": torch.stack(movs), "fixed": torch.stack(fixs)}
    if cfg.use_roi_mask:
        out["moving_mask"] = torch.stack(mask_m)
        out["fixed_mask"] = torch.stack(mask_f)
    else:
        ones = torch.ones(len(records), 1, H, W)
        out["moving_mask"], out["fixed_mask"] = ones, ones.clone()
    return out


def param_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def format_epoch_line(epoch: int, lr: float, terms: dict) -> str:
    # repr gives the shortest exact decimal, so logs parse back bit-identical
    cells = [f"epoch={epoch}", f"lr={lr!r}"]
    cells += [f"{k}={float(v)!r}" for k, v in terms.items()]
    return " ".join(cells)


def parse_train_log(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.startswith("epoch="):
            continue
        row = {}
        for cell in line.split():
            k, v = cell.split("=", 1)
            row[k] = int(v) if k == "epoch" else float(v)
        rows.append(row)
    return rows


class _RunLog:
    def __init__(self, out_dir: Path | None, name: str):
        self.lines: list[str] = []
        self.path = (out_dir / name) if out_dir is not None else None

    def add(self, line: str):
        self.lines.append(line)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(line + "\n")


def _epoch_batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def save_checkpoint(path, model: torch.nn.Module, cfg: TrainConfig, *,
                    kind: str, epoch: int, optimizer=None,
                    metrics: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "epoch": epoch,
        "config": cfg.to_dict(),
        "config_digest": config_digest(cfg),
        "model_state": model.state_dict(),
        "optim_state": optimizer.state_dict() if optimizer is not None else None,
        "metrics": dict(metrics or {}),
    }
    torch.save(blob, path)
    return path


def load_checkpoint(path) -> dict:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version "
                          f"{blob.get('version')!r}")
    return blob


def restore_model(blob: dict):
    """Rebuild the network recorded in a checkpoint blob. Returns (net, cfg)."""
    cfg = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in blob["config"].items()})
    if blob["kind"] == "guidance":
        net = GuidanceNet(cfg.arch())
    elif blob["kind"] == "registration":
        net = RegistrationModel(cfg.arch())
    else:
        raise ConfigError(f"unknown checkpoint kind {blob['kind']!r}")
    net.load_state_dict(blob["model_state"])
    net.eval()
    return net, cfg


def pretrain_guidance(records, cfg: TrainConfig, out_dir=None):
    """Stage 1: reconstruction training of the guidance network on aligned
    pairs. Returns (net, history)."""
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out_dir / "config.json")
    seed_everything(cfg.seed)
    data = load_pair_arrays(records, cfg)
    net = GuidanceNet(cfg.arch()).to(cfg.device)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    log = _RunLog(out_dir, "pretrain_log.txt")
    history = []
    moving = data["moving"].to(cfg.device)
    fixed = data["fixed"].to(cfg.device)
    for epoch in range(cfg.epochs):
        lr = poly_lr(cfg.lr, epoch, cfg.epochs, cfg.poly_power)
        for group in opt.param_groups:
            group["lr"] = lr
        total, count = 0.0, 0
        for idx in _epoch_batches(len(records), cfg.batch_size, gen):
            i_x, i_y = moving[idx], fixed[idx]
            out = net(i_x, i_y)
            loss = guidance_recon_loss(out["ix_hat"], i_x, out["iy_hat"], i_y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        terms = {"recon": total / count}
        history.append({"epoch": epoch, "lr": lr, **terms})
        log.add(format_epoch_line(epoch, lr, terms))
    if out_dir is not None:
        save_checkpoint(out_dir / "guidance.pt", net, cfg,
                        kind="guidance", epoch=cfg.epochs - 1, optimizer=opt)
    return net, history


def _load_guidance(guidance, cfg: TrainConfig) -> GuidanceNet:
    if isinstance(guidance, GuidanceNet):
        return guidance
    blob = guidance if isinstance(guidance, dict) else load_checkpoint(guidance)
    if blob["kind"] != "guidance":
        raise ConfigError("stage 2 needs a guidance checkpoint")
    net = GuidanceNet(cfg.arch())
    net.load_state_dict(blob["model_state"])
    return net


def _sim_mask(moving_mask, fixed_mask, phi) -> torch.Tensor:
    """Union of the fixed mask and the φ-warped moving mask (φ detached so
    the mask acts as a weight, not a gradient path)."""
    warped = warp(moving_mask, phi.detach())
    return torch.maximum(fixed_mask, (warped > 0.5).float())


def train_registration(records, cfg: TrainConfig, guidance, out_dir=None):
    """Stage 2: optimize the registration model against the frozen guidance
    network. Returns (model, history); history carries the freeze digests."""
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out_dir / "config.json")
    seed_everything(cfg.seed)
    data = load_pair_arrays(records, cfg)
    moving = data["moving"].to(cfg.device)
    fixed = data["fixed"].to(cfg.device)
    moving_mask = data["moving_mask"].to(cfg.device)
    fixed_mask = data["fixed_mask"].to(cfg.device)

    g_net = _load_guidance(guidance, cfg).to(cfg.device)
    g_net.eval().requires_grad_(False)
    for p in g_net.parameters():
        p.grad = None      # drop stage-1 leftovers so stage 2 provably adds none
    digest_before = param_digest(g_net)
    # frozen targets, computed once: constants as far as autograd is concerned
    with torch.no_grad():
        tx, ty = [], []
        for i in range(0, len(records), cfg.batch_size):
            gx, gy = g_net.content_maps(moving[i:i + cfg.batch_size],
                                        fixed[i:i + cfg.batch_size])
            tx.append(gx)
            ty.append(gy)
        target_x, target_y = torch.cat(tx), torch.cat(ty)

    model = RegistrationModel(cfg.arch()).to(cfg.device)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    weights = cfg.loss_weights()
    gen = torch.Generator().manual_seed(cfg.seed)
    log = _RunLog(out_dir, "train_log.txt")
    history = []
    for epoch in range(cfg.epochs):
        lr = poly_lr(cfg.lr, epoch, cfg.epochs, cfg.poly_power)
        for group in opt.param_groups:
            group["lr"] = lr
        sums = {"sim": 0.0, "smooth": 0.0, "guide": 0.0, "recon": 0.0,
                "total": 0.0}
        count = 0
        for idx in _epoch_batches(len(records), cfg.batch_size, gen):
            i_x, i_y = moving[idx], fixed[idx]
            out = model(i_x, i_y)
            mask = _sim_mask(moving_mask[idx], fixed_mask[idx], out["phi"])
            l_sim = sim_loss(out["x_warp"], i_y, mask)
            l_smooth = smooth_loss(out["phi"])
            l_guide = guidance_loss((out["mi_x"], out["mi_y"]),
                                    (target_x[idx], target_y[idx]))
            l_recon = recon_loss(out["ix_hat"], i_x, out["iy_hat"], i_y)
            loss = total_loss((l_sim, l_smooth, l_guide, l_recon), weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            n = len(idx)
            for key, val in (("sim", l_sim), ("smooth", l_smooth),
                             ("guide", l_guide), ("recon", l_recon),
                             ("total", loss)):
                sums[key] += val.item() * n
            count += n
        terms = {k: v / count for k, v in sums.items()}
        history.append({"epoch": epoch, "lr": lr, **terms})
        log.add(format_epoch_line(epoch, lr, terms))

    digest_after = param_digest(g_net)
    if digest_after != digest_before:
        raise RuntimeError("guidance network changed during stage 2")
    history_meta = {"guidance_digest_before": digest_before,
                    "guidance_digest_after": digest_after}
    if out_dir is not None:
        save_checkpoint(out_dir / "model.pt", model, cfg,
                        kind="registration", epoch=cfg.epochs - 1,
                        optimizer=opt, metrics=history_meta)
    model._freeze_digests = history_meta
    return model, history


def infer_register(i_x: torch.Tensor, i_y: torch.Tensor, ckpt):
    """Pure inference: returns (phi, warped moving image). `ckpt` may be a
    checkpoint path, a loaded blob, or a RegistrationModel."""
    if isinstance(ckpt, RegistrationModel):
        model = ckpt
    else:
        blob = ckpt if isinstance(ckpt, dict) else load_checkpoint(ckpt)
        model, _ = restore_model(blob)
    model.eval()
    squeeze = i_x.dim() == 3
    if squeeze:
        i_x, i_y = i_x[None], i_y[None]
    with torch.no_grad():
        out = model(i_x, i_y)
    phi, warped = out["phi"], out["x_warp"]
    return (phi[0], warped[0]) if squeeze else (phi, warped)
