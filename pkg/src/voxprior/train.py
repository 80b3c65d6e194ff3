"""Losses, optimizers, loss-weight calibration and the two-stage training
procedures (supervised completion, WGAN-GP critic pretraining, fine-tuning
with the frozen critic as a naturalness loss)."""

import os

import numpy as np

from . import autodiff as ad
from . import nets, render
from .errors import CalibrationError, ShapeMismatchError, TrainingDivergedError
from .synth import DatasetManifest
from .voxel import read_grid


# ----------------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------------

def voxel_loss(pred, target):
    """Mean binary cross-entropy over batch and voxels."""
    return ad.bce(pred, target)


def wgan_gp_losses(critic, real, fake, lam, rng):
    """Critic loss of the gradient-penalty Wasserstein objective.

    Interpolates draw one epsilon ~ U(0,1) per sample, shared across its
    voxels. The penalty gradient flows into the critic parameters through a
    recorded (higher-order) backward pass.

    Returns (critic_loss, penalty_term, interpolates).
    """
    real, fake = ad.as_tensor(real), ad.as_tensor(fake)
    if real.shape != fake.shape:
        raise ShapeMismatchError(
            "real/fake batch mismatch: %r vs %r" % (real.shape, fake.shape))
    if lam < 0:
        raise ValueError("gradient-penalty weight must be >= 0, got %r" % (lam,))
    B = real.shape[0]
    eps = rng.random(B).reshape((B,) + (1,) * (real.ndim - 1))
    x_hat = ad.Tensor(eps * real.data + (1.0 - eps) * fake.data, requires_grad=True)
    d_hat = critic.forward(x_hat)
    (grad_x,) = ad.backward(ad.sum_(d_hat), [x_hat], higher_order=True)
    norms = ad.l2_norm(ad.reshape(grad_x, (B, -1)), axis=1)
    penalty = ad.scale(ad.mean(ad.power(norms - 1.0, 2.0)), lam)
    critic_loss = ad.mean(critic.forward(fake)) - ad.mean(critic.forward(real)) + penalty
    return critic_loss, penalty, x_hat


def naturalness_loss(critic, completed):
    """Negated mean critic score of completed shapes."""
    return ad.scale(ad.mean(critic.forward(ad.as_tensor(completed))), -1.0)


def combined_loss(l_voxel, l_natural, alpha):
    if alpha < 0:
        raise ValueError("alpha must be >= 0, got %r" % (alpha,))
    return ad.add(l_voxel, ad.scale(l_natural, alpha))


def _global_grad_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g.data ** 2)) for g in grads)))


def calibrate_alpha(completion, critic, inputs, targets):
    """Gradient-scale ratio ||grad L_voxel|| / ||grad L_natural|| over the
    completion parameters, so the two weighted contributions match in norm."""
    params = list(completion.params().values())
    pred = completion.forward(ad.as_tensor(inputs))
    gv = ad.backward(voxel_loss(pred, ad.as_tensor(targets)), params)
    pred2 = completion.forward(ad.as_tensor(inputs))
    gn = ad.backward(naturalness_loss(critic, pred2), params)
    norm_v, norm_n = _global_grad_norm(gv), _global_grad_norm(gn)
    if norm_n == 0.0:
        raise CalibrationError("naturalness gradient is zero; cannot calibrate alpha")
    return norm_v / norm_n


# ----------------------------------------------------------------------------
# optimizers
# ----------------------------------------------------------------------------

class SGD:
    """Momentum SGD: v = m*v + g; p -= lr*v."""

    def __init__(self, param_names, lr, momentum=0.0):
        self.lr, self.momentum = float(lr), float(momentum)
        self.velocity = {n: None for n in param_names}

    def step(self, params, grads):
        for name, p in params.items():
            g = grads[name].data
            if g.shape != p.shape:
                raise ShapeMismatchError("gradient shape %r != param %r for %s"
                                         % (g.shape, p.shape, name))
            v = self.velocity[name]
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            p.data = p.data - self.lr * v

    def state_arrays(self):
        out = {}
        for n, v in self.velocity.items():
            if v is not None:
                out["opt.v." + n] = v.copy()
        return out

    def load_state(self, arrays):
        for n in self.velocity:
            key = "opt.v." + n
            if key in arrays:
                self.velocity[n] = arrays[key].copy()


class Adam:
    def __init__(self, param_names, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = float(lr), beta1, beta2, eps
        self.m = {n: None for n in param_names}
        self.v = {n: None for n in param_names}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name].data
            if g.shape != p.shape:
                raise ShapeMismatchError("gradient shape %r != param %r for %s"
                                         % (g.shape, p.shape, name))
            m = self.m[name]
            v = self.v[name]
            m = (1 - self.beta1) * g if m is None else self.beta1 * m + (1 - self.beta1) * g
            v = (1 - self.beta2) * g ** 2 if v is None else self.beta2 * v + (1 - self.beta2) * g ** 2
            self.m[name], self.v[name] = m, v
            p.data = p.data - self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self):
        out = {"opt.t": np.array([float(self.t)])}
        for n in self.m:
            if self.m[n] is not None:
                out["opt.m." + n] = self.m[n].copy()
                out["opt.v2." + n] = self.v[n].copy()
        return out

    def load_state(self, arrays):
        self.t = int(arrays["opt.t"][0])
        for n in self.m:
            if "opt.m." + n in arrays:
                self.m[n] = arrays["opt.m." + n].copy()
                self.v[n] = arrays["opt.v2." + n].copy()


def sgd_step(params, grads, lr, momentum, state):
    """One in-place momentum-SGD update; `state` maps names to velocities."""
    opt = SGD(list(params), lr, momentum)
    opt.velocity.update(state)
    opt.step(params, grads)
    state.update(opt.velocity)


def adam_step(params, grads, lr, state, beta1=0.9, beta2=0.999, eps=1e-8):
    opt = Adam(list(params), lr, beta1, beta2, eps)
    opt.t = state.get("t", 0)
    opt.m.update(state.get("m", {}))
    opt.v.update(state.get("v", {}))
    opt.step(params, grads)
    state["t"], state["m"], state["v"] = opt.t, opt.m, opt.v


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

class Checkpoint:
    """Named arrays (net params/buffers, optimizer slots) + epoch + RNG state."""

    def __init__(self, arrays, epoch, rng_state, meta=None):
        self.arrays = dict(arrays)
        self.epoch = int(epoch)
        self.rng_state = rng_state
        self.meta = dict(meta or {})

    def save(self, path):
        meta = dict(self.meta)
        meta["epoch"] = self.epoch
        meta["rng_state"] = _rng_state_to_json(self.rng_state)
        ad.save_tensors(path, self.arrays, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = ad.load_tensors(path)
        epoch = meta.pop("epoch")
        rng_state = _rng_state_from_json(meta.pop("rng_state"))
        return cls(arrays, epoch, rng_state, meta)


def _rng_state_to_json(state):
    if state is None:
        return None
    out = dict(state)
    out["state"] = {k: int(v) if isinstance(v, (int, np.integer)) else v
                    for k, v in state["state"].items()}
    return out


def _rng_state_from_json(state):
    return state


def save_checkpoint(path, checkpoint):
    checkpoint.save(path)


def load_checkpoint(path):
    return Checkpoint.load(path)


# ----------------------------------------------------------------------------
# data plumbing
# ----------------------------------------------------------------------------

def load_view_dataset(manifest, data_dir, image_size, split, dtype="float64"):
    """Render every (shape, view) pair of a split into network inputs/targets.

    Returns (inputs (M,4,W,W), targets (M,N,N,N), keys [(shape_id, view_id)]).
    """
    inputs, targets, keys = [], [], []
    for entry in manifest.split(split):
        grid = read_grid(os.path.join(data_dir, "shapes", entry["id"] + ".vxg"))
        target = grid.values.astype(dtype)
        for k, view in enumerate(entry["views"]):
            cam = render.camera_from_angles(view["azimuth"], view["elevation"],
                                            view["distance"], image_size, image_size)
            maps = render.render_view(grid, cam)
            inputs.append(render.mask_maps(maps).astype(dtype))
            targets.append(target)
            keys.append((entry["id"], k))
    return np.stack(inputs), np.stack(targets), keys


def load_grid_set(manifest, data_dir, split, dtype="float64"):
    grids, ids = [], []
    for entry in manifest.split(split):
        grid = read_grid(os.path.join(data_dir, "shapes", entry["id"] + ".vxg"))
        grids.append(grid.values.astype(dtype))
        ids.append(entry["id"])
    return np.stack(grids), ids


def _check_finite(loss, stage, epoch):
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            "%s loss became non-finite at epoch %d" % (stage, epoch))


def _write_curve(path, header, rows):
    if path is None:
        return
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join("%.17g" % v if isinstance(v, float) else str(v) for v in row) + "\n")


def build_nets(config):
    """Construct the three networks from architecture config keys."""
    dtype = config.get("dtype", "float64")
    completion = nets.CompletionNet(
        image_size=config.get("image_size", 32), voxels=config.get("voxels", 16),
        latent_dim=config.get("latent_dim", 64),
        base_channels=config.get("base_channels", 16), dtype=dtype)
    generator = nets.Generator(
        voxels=config.get("voxels", 16), latent_dim=config.get("gan_latent_dim", 32),
        base_channels=config.get("base_channels", 16), dtype=dtype)
    critic = nets.Critic(
        voxels=config.get("voxels", 16),
        base_channels=config.get("base_channels", 16), dtype=dtype)
    return completion, generator, critic


# ----------------------------------------------------------------------------
# training stages
# ----------------------------------------------------------------------------

def _completion_training_loop(net, opt, inputs, targets, epochs, batch_size, gen,
                              alpha=0.0, critic=None, start_epoch=0, curve=None):
    """Shared inner loop for supervised training and fine-tuning.

    With alpha == 0 the naturalness term is skipped entirely, so fine-tuning
    at alpha=0 replays exactly the supervised update sequence.
    """
    params = net.params()
    M = inputs.shape[0]
    for epoch in range(start_epoch, start_epoch + epochs):
        order = gen.permutation(M)
        ep_voxel, ep_natural, n_batches = 0.0, 0.0, 0
        for s in range(0, M, batch_size):
            idx = order[s:s + batch_size]
            pred = net.forward(ad.as_tensor(inputs[idx]))
            lv = voxel_loss(pred, ad.as_tensor(targets[idx]))
            if alpha > 0.0:
                ln = naturalness_loss(critic, pred)
                loss = combined_loss(lv, ln, alpha)
                ep_natural += ln.item()
            else:
                loss = lv
            _check_finite(loss.item(), "completion", epoch)
            grads = dict(zip(params, ad.backward(loss, list(params.values()))))
            opt.step(params, grads)
            ep_voxel += lv.item()
            n_batches += 1
        if curve is not None:
            curve.append((epoch, ep_voxel / n_batches, ep_natural / max(n_batches, 1)))
    return start_epoch + epochs


def train_completion(config, resume=None, curve_path=None):
    """Stage 1: supervised voxel-loss training of the completion network."""
    manifest = DatasetManifest.load(os.path.join(config["data_dir"], "manifest.json"))
    net, _, _ = build_nets(config)
    dtype = config.get("dtype", "float64")
    inputs, targets, _ = load_view_dataset(manifest, config["data_dir"],
                                           config.get("image_size", 32), "train", dtype)
    opt = SGD(list(net.params()), config.get("lr", 0.1), config.get("momentum", 0.9))
    gen = np.random.default_rng(np.random.PCG64(config.get("seed", 0)))
    start_epoch = 0
    if resume is not None:
        net.load_params({k[len("completion."):]: v for k, v in resume.arrays.items()
                         if k.startswith("completion.")})
        opt.load_state({k[len("completion."):]: v for k, v in resume.arrays.items()
                        if k.startswith("completion.opt.")})
        gen.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
    else:
        nets.init_weights(net, config.get("init_seed", config.get("seed", 0) + 1))
    curve = []
    epoch = _completion_training_loop(net, opt, inputs, targets,
                                      config.get("epochs", 10),
                                      config.get("batch", 8), gen,
                                      start_epoch=start_epoch, curve=curve)
    _write_curve(curve_path, ("epoch", "voxel_loss", "naturalness_loss"), curve)
    arrays = {"completion." + k: v for k, v in net.state_arrays().items()}
    arrays.update({"completion." + k: v for k, v in opt.state_arrays().items()})
    return Checkpoint(arrays, epoch, gen.bit_generator.state, {"stage": "completion"})


def train_gan(config, curve_path=None):
    """Stage 1: WGAN-GP pretraining of generator and critic over real shapes."""
    manifest = DatasetManifest.load(os.path.join(config["data_dir"], "manifest.json"))
    _, generator, critic = build_nets(config)
    nets.init_weights(generator, config.get("init_seed", config.get("seed", 0) + 1) + 101)
    nets.init_weights(critic, config.get("init_seed", config.get("seed", 0) + 1) + 202)
    dtype = config.get("dtype", "float64")
    reals, _ = load_grid_set(manifest, config["data_dir"], "train", dtype)
    gen = np.random.default_rng(np.random.PCG64(config.get("seed", 0) + 7))
    lam = config.get("lambda", 10.0)
    lr = config.get("gan_lr", 0.001)
    batch = config.get("gan_batch", 4)
    critic_iters = config.get("critic_iters", 5)
    beta1 = config.get("gan_beta1", 0.5)
    beta2 = config.get("gan_beta2", 0.9)
    g_params, d_params = generator.params(), critic.params()
    g_opt = Adam(list(g_params), lr, beta1, beta2)
    d_opt = Adam(list(d_params), lr, beta1, beta2)
    M = reals.shape[0]
    curve = []
    for epoch in range(config.get("gan_epochs", 10)):
        order = gen.permutation(M)
        ep_d, ep_gp, ep_g, n_d, n_g = 0.0, 0.0, 0.0, 0, 0
        for s in range(0, M, batch):
            idx = order[s:s + batch]
            real = reals[idx]
            z = gen.standard_normal((len(idx), generator.latent_dim)).astype(dtype)
            with ad.no_grad():
                fake = generator.forward(ad.as_tensor(z)).detach()
            d_loss, gp, _ = wgan_gp_losses(critic, real, fake, lam, gen)
            _check_finite(d_loss.item(), "critic", epoch)
            grads = dict(zip(d_params, ad.backward(d_loss, list(d_params.values()))))
            d_opt.step(d_params, grads)
            ep_d += d_loss.item()
            ep_gp += gp.item()
            n_d += 1
            if n_d % critic_iters == 0:
                z = gen.standard_normal((batch, generator.latent_dim)).astype(dtype)
                g_loss = ad.scale(ad.mean(critic.forward(
                    generator.forward(ad.as_tensor(z)))), -1.0)
                _check_finite(g_loss.item(), "generator", epoch)
                grads = dict(zip(g_params, ad.backward(g_loss, list(g_params.values()))))
                g_opt.step(g_params, grads)
                ep_g += g_loss.item()
                n_g += 1
        curve.append((epoch, ep_d / n_d, ep_gp / n_d, ep_g / max(n_g, 1)))
    _write_curve(curve_path, ("epoch", "critic_loss", "gradient_penalty", "generator_loss"),
                 curve)
    arrays = {"generator." + k: v for k, v in generator.state_arrays().items()}
    arrays.update({"critic." + k: v for k, v in critic.state_arrays().items()})
    arrays.update({"gan_opt.g." + k: v for k, v in g_opt.state_arrays().items()})
    arrays.update({"gan_opt.d." + k: v for k, v in d_opt.state_arrays().items()})
    return Checkpoint(arrays, config.get("gan_epochs", 10), gen.bit_generator.state,
                      {"stage": "gan"})


def finetune(config, completion_ckpt, gan_ckpt, curve_path=None):
    """Stage 2: fine-tune the completion network with voxel + naturalness losses.

    The critic is frozen; the generator takes no part. alpha="auto" runs
    gradient-scale calibration once at the start, then holds the value fixed.
    """
    manifest = DatasetManifest.load(os.path.join(config["data_dir"], "manifest.json"))
    net, _, critic = build_nets(config)
    net.load_params({k[len("completion."):]: v for k, v in completion_ckpt.arrays.items()
                     if k.startswith("completion.") and not k.startswith("completion.opt.")})
    critic.load_params({k[len("critic."):]: v for k, v in gan_ckpt.arrays.items()
                        if k.startswith("critic.")})
    dtype = config.get("dtype", "float64")
    inputs, targets, _ = load_view_dataset(manifest, config["data_dir"],
                                           config.get("image_size", 32), "train", dtype)
    gen = np.random.default_rng(np.random.PCG64(config.get("seed", 0)))
    gen.bit_generator.state = completion_ckpt.rng_state
    alpha = config.get("alpha", "auto")
    if alpha == "auto":
        nb = min(config.get("batch", 8), inputs.shape[0])
        alpha = calibrate_alpha(net, critic, inputs[:nb], targets[:nb])
    alpha = float(alpha)
    opt = SGD(list(net.params()), config.get("finetune_lr", config.get("lr", 0.1)),
              config.get("momentum", 0.9))
    opt.load_state({k[len("completion."):]: v for k, v in completion_ckpt.arrays.items()
                    if k.startswith("completion.opt.")})
    curve = []
    epoch = _completion_training_loop(net, opt, inputs, targets,
                                      config.get("finetune_epochs", 5),
                                      config.get("batch", 8), gen,
                                      alpha=alpha, critic=critic,
                                      start_epoch=completion_ckpt.epoch, curve=curve)
    _write_curve(curve_path, ("epoch", "voxel_loss", "naturalness_loss"), curve)
    arrays = {"completion." + k: v for k, v in net.state_arrays().items()}
    arrays.update({"completion." + k: v for k, v in opt.state_arrays().items()})
    arrays.update({"critic." + k: v for k, v in critic.state_arrays().items()})
    return Checkpoint(arrays, epoch, gen.bit_generator.state,
                      {"stage": "finetune", "alpha": alpha})
