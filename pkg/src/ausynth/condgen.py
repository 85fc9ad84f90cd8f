"""Conditional adversarial generators of expression parameter vectors.

Two model families share the machinery here. The CGAN maps (noise,
label) to a parameter vector through a generator G while a conditional
discriminator D separates real from generated (params, label) pairs.
The CAAE encodes a source parameter vector to a latent code, decodes it
together with a target label, and carries two adversaries: one pushing
the latent codes toward a uniform prior and one on the conditional
output distribution. Both generators carry a hinge penalty that keeps
generated coefficients inside per-dimension limits.

Training alternates discriminator and generator Adam updates on a
fixed-wiring tape per phase; every run is bitwise reproducible per seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import Tape
from .dataio import ParamBounds, unit_bounds
from .errors import ConfigError, ContractError, NumericError
from .labels import scale_label, soften_scaled_batch

DEFAULT_Z_DIM = 100
DEFAULT_LATENT_DIM = 50
# Default hidden widths tapering between the fixed input/output dims.
CGAN_G_HIDDEN = (256, 128)
CGAN_D_HIDDEN = (128, 64)
CAAE_E_HIDDEN = (128, 64)
CAAE_G_HIDDEN = (128, 128)
CAAE_DZ_HIDDEN = (64, 32)
CAAE_DE_HIDDEN = (128, 64)


@dataclass
class TrainConfig:
    """Hyperparameters for both trainers; defaults match the full-size setup."""

    learning_rate: float = 1e-5
    iterations: int = 150_000
    batch_size: int = 64
    lam: float = 100.0          # reconstruction weight (CAAE only)
    beta: float = 10.0          # bound-regularizer weight
    seed: int = 0
    soft_labels: bool = False   # soften labels for conditioning during training
    d_steps: int = 1            # discriminator updates per generator update
    non_saturating: bool = False
    # architecture knobs; None picks the full-size defaults above
    z_dim: int = None
    latent_dim: int = None
    g_hidden: tuple = None
    d_hidden: tuple = None
    e_hidden: tuple = None
    dz_hidden: tuple = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.iterations <= 0 or self.batch_size <= 0:
            raise ConfigError("learning rate, iterations and batch size must be positive")
        if self.lam < 0 or self.beta < 0:
            raise ConfigError("tradeoff weights must be nonnegative")
        if self.d_steps < 1:
            raise ConfigError("need at least one discriminator step per iteration")


@dataclass
class CganModel:
    g_spec: nn.MlpSpec
    g: nn.MlpWeights
    d_spec: nn.MlpSpec
    d: nn.MlpWeights
    bounds: ParamBounds          # normalized-space limits for the hinge penalty
    beta: float
    z_dim: int
    label_dim: int
    param_dim: int
    data_bounds: ParamBounds = None  # raw-space bounds recorded at training time
    step: int = 0
    seed: int = 0


@dataclass
class CaaeModel:
    e_spec: nn.MlpSpec
    e: nn.MlpWeights
    g_spec: nn.MlpSpec
    g: nn.MlpWeights
    dz_spec: nn.MlpSpec
    dz: nn.MlpWeights
    de_spec: nn.MlpSpec
    de: nn.MlpWeights
    bounds: ParamBounds
    lam: float
    beta: float
    latent_dim: int
    label_dim: int
    param_dim: int
    data_bounds: ParamBounds = None
    step: int = 0
    seed: int = 0


@dataclass
class TrainLog:
    """Per-iteration scalars; `wall` holds elapsed seconds (not deterministic)."""

    columns: tuple
    data: np.ndarray
    wall: np.ndarray


@dataclass
class CaaeLosses:
    """All loss terms of one CAAE evaluation."""

    recon: float        # L1 reconstruction, averaged over batch and dims
    reg: float          # bound hinge penalty
    adv_prior: float    # generator-side prior adversary term
    adv_exp: float      # generator-side output adversary term
    eg_loss: float      # lam*recon + beta*reg + adversarial terms
    dz_loss: float      # prior discriminator loss
    de_loss: float      # output discriminator loss


# ---- loss graphs -------------------------------------------------------

def _reg_nodes(tape, x_node, bounds):
    """Hinge penalty: per-sample L1 of bound violations, averaged over the batch."""
    upper = tape.constant(bounds.upper)
    lower = tape.constant(bounds.lower)
    over = tape.maxc(tape.sub(x_node, upper), 0.0)
    under = tape.maxc(tape.sub(lower, x_node), 0.0)
    # mean over all entries times dim == per-sample dim-sum averaged over batch
    return tape.scale(tape.mean(tape.add(over, under)), float(bounds.dim))


def _neg_mean_log(tape, node):
    return tape.scale(tape.mean(tape.log(node)), -1.0)


def _mean_log_one_minus(tape, node):
    return tape.mean(tape.log(tape.one_minus(node)))


def regularization_loss(batch, bounds):
    """Bound penalty of a parameter batch: zero iff every entry is in bounds."""
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[0] == 0:
        raise ConfigError("regularization_loss needs a nonempty batch")
    if x.shape[1] != bounds.dim:
        raise ContractError(f"batch dim {x.shape[1]} != bounds dim {bounds.dim}")
    tape = Tape()
    node = _reg_nodes(tape, tape.input("x"), bounds)
    tape.forward({"x": x})
    return float(tape.value(node))


def _build_cgan_fake(model):
    """z, y -> generated batch (forward only)."""
    tape = Tape()
    z = tape.input("z")
    y = tape.input("y")
    g_nodes = nn.declare_mlp(tape, model.g_spec, "G", trainable=False)
    fake = nn.apply_mlp(tape, model.g_spec, g_nodes, tape.concat(z, y))
    return tape, {"fake": fake}


def _build_cgan_d(model):
    """Discriminator loss: -mean log D(x,y) - mean log(1 - D(fake,y))."""
    tape = Tape()
    x = tape.input("x")
    y = tape.input("y")
    fake = tape.input("x_fake")
    d_nodes = nn.declare_mlp(tape, model.d_spec, "D", trainable=True)
    d_real = nn.apply_mlp(tape, model.d_spec, d_nodes, tape.concat(x, y))
    d_fake = nn.apply_mlp(tape, model.d_spec, d_nodes, tape.concat(fake, y))
    d_loss = tape.add(_neg_mean_log(tape, d_real),
                      tape.scale(_mean_log_one_minus(tape, d_fake), -1.0))
    return tape, {"d_loss": d_loss}


def _build_cgan_g(model, non_saturating):
    """Generator objective: adversarial term plus beta times the bound penalty."""
    tape = Tape()
    z = tape.input("z")
    y = tape.input("y")
    g_nodes = nn.declare_mlp(tape, model.g_spec, "G", trainable=True)
    d_nodes = nn.declare_mlp(tape, model.d_spec, "D", trainable=False)
    fake = nn.apply_mlp(tape, model.g_spec, g_nodes, tape.concat(z, y))
    d_fake = nn.apply_mlp(tape, model.d_spec, d_nodes, tape.concat(fake, y))
    if non_saturating:
        adv = _neg_mean_log(tape, d_fake)
    else:
        adv = _mean_log_one_minus(tape, d_fake)
    reg = _reg_nodes(tape, fake, model.bounds)
    g_loss = tape.add(adv, tape.scale(reg, float(model.beta)))
    return tape, {"fake": fake, "adv": adv, "reg": reg, "g_loss": g_loss}


def _build_caae_fake(model):
    """x, y -> latent code and reconstruction/generation (forward only)."""
    tape = Tape()
    x = tape.input("x")
    y = tape.input("y")
    e_nodes = nn.declare_mlp(tape, model.e_spec, "E", trainable=False)
    g_nodes = nn.declare_mlp(tape, model.g_spec, "G", trainable=False)
    code = nn.apply_mlp(tape, model.e_spec, e_nodes, x)
    fake = nn.apply_mlp(tape, model.g_spec, g_nodes, tape.concat(code, y))
    return tape, {"code": code, "fake": fake}


def _build_caae_dz(model):
    """Prior discriminator loss: -mean log Dz(z*) - mean log(1 - Dz(E(x)))."""
    tape = Tape()
    z_star = tape.input("z_star")
    code = tape.input("code")
    dz_nodes = nn.declare_mlp(tape, model.dz_spec, "Dz", trainable=True)
    d_prior = nn.apply_mlp(tape, model.dz_spec, dz_nodes, z_star)
    d_code = nn.apply_mlp(tape, model.dz_spec, dz_nodes, code)
    dz_loss = tape.add(_neg_mean_log(tape, d_prior),
                       tape.scale(_mean_log_one_minus(tape, d_code), -1.0))
    return tape, {"dz_loss": dz_loss}


def _build_caae_de(model):
    """Output discriminator loss on (params, label) pairs, as in the CGAN."""
    tape = Tape()
    x = tape.input("x")
    y = tape.input("y")
    fake = tape.input("x_fake")
    de_nodes = nn.declare_mlp(tape, model.de_spec, "De", trainable=True)
    d_real = nn.apply_mlp(tape, model.de_spec, de_nodes, tape.concat(x, y))
    d_fake = nn.apply_mlp(tape, model.de_spec, de_nodes, tape.concat(fake, y))
    de_loss = tape.add(_neg_mean_log(tape, d_real),
                       tape.scale(_mean_log_one_minus(tape, d_fake), -1.0))
    return tape, {"de_loss": de_loss}


def _build_caae_eg(model, non_saturating):
    """Encoder+generator objective: lam*L1 + beta*reg + both adversarial terms."""
    tape = Tape()
    x = tape.input("x")
    y = tape.input("y")
    e_nodes = nn.declare_mlp(tape, model.e_spec, "E", trainable=True)
    g_nodes = nn.declare_mlp(tape, model.g_spec, "G", trainable=True)
    dz_nodes = nn.declare_mlp(tape, model.dz_spec, "Dz", trainable=False)
    de_nodes = nn.declare_mlp(tape, model.de_spec, "De", trainable=False)
    code = nn.apply_mlp(tape, model.e_spec, e_nodes, x)
    fake = nn.apply_mlp(tape, model.g_spec, g_nodes, tape.concat(code, y))
    recon = tape.mean(tape.abs(tape.sub(x, fake)))
    d_code = nn.apply_mlp(tape, model.dz_spec, dz_nodes, code)
    d_fake = nn.apply_mlp(tape, model.de_spec, de_nodes, tape.concat(fake, y))
    if non_saturating:
        adv_prior = _neg_mean_log(tape, d_code)
        adv_exp = _neg_mean_log(tape, d_fake)
    else:
        adv_prior = _mean_log_one_minus(tape, d_code)
        adv_exp = _mean_log_one_minus(tape, d_fake)
    reg = _reg_nodes(tape, fake, model.bounds)
    eg_loss = tape.add(tape.add(tape.scale(recon, float(model.lam)),
                                tape.scale(reg, float(model.beta))),
                       tape.add(adv_prior, adv_exp))
    return tape, {"code": code, "fake": fake, "recon": recon, "reg": reg,
                  "adv_prior": adv_prior, "adv_exp": adv_exp, "eg_loss": eg_loss}


# ---- public loss evaluators --------------------------------------------

def _check_batch(x, y, param_dim, label_dim):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != param_dim:
        raise ContractError(f"param batch dim {x.shape[1]} != model dim {param_dim}")
    if y.shape[1] != label_dim:
        raise ContractError(f"label batch dim {y.shape[1]} != model dim {label_dim}")
    if x.shape[0] != y.shape[0]:
        raise ContractError("param and label batch sizes differ")
    return x, y


def cgan_losses(model, x, y_scaled, z, non_saturating=False):
    """Evaluate (d_loss, g_loss) on one batch; labels already scaled to [-1, 1]."""
    x, y = _check_batch(x, y_scaled, model.param_dim, model.label_dim)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape != (x.shape[0], model.z_dim):
        raise ContractError(f"noise batch must be ({x.shape[0]}, {model.z_dim})")
    g_tape, g_nodes = _build_cgan_g(model, non_saturating)
    g_tape.forward({"z": z, "y": y, **nn.mlp_bindings("G", model.g),
                    **nn.mlp_bindings("D", model.d)})
    fake = g_tape.value(g_nodes["fake"])
    g_loss = float(g_tape.value(g_nodes["g_loss"]))
    d_tape, d_nodes = _build_cgan_d(model)
    d_tape.forward({"x": x, "y": y, "x_fake": fake,
                    **nn.mlp_bindings("D", model.d)})
    return float(d_tape.value(d_nodes["d_loss"])), g_loss


def caae_losses(model, x, y_scaled, z_star, non_saturating=False):
    """Evaluate every CAAE loss term on one batch; returns a `CaaeLosses`."""
    x, y = _check_batch(x, y_scaled, model.param_dim, model.label_dim)
    z_star = np.atleast_2d(np.asarray(z_star, dtype=np.float64))
    if z_star.shape != (x.shape[0], model.latent_dim):
        raise ContractError(f"prior batch must be ({x.shape[0]}, {model.latent_dim})")
    eg_tape, eg = _build_caae_eg(model, non_saturating)
    eg_tape.forward({"x": x, "y": y,
                     **nn.mlp_bindings("E", model.e), **nn.mlp_bindings("G", model.g),
                     **nn.mlp_bindings("Dz", model.dz), **nn.mlp_bindings("De", model.de)})
    code = eg_tape.value(eg["code"])
    fake = eg_tape.value(eg["fake"])
    dz_tape, dzn = _build_caae_dz(model)
    dz_tape.forward({"z_star": z_star, "code": code,
                     **nn.mlp_bindings("Dz", model.dz)})
    de_tape, den = _build_caae_de(model)
    de_tape.forward({"x": x, "y": y, "x_fake": fake,
                     **nn.mlp_bindings("De", model.de)})
    return CaaeLosses(recon=float(eg_tape.value(eg["recon"])),
                      reg=float(eg_tape.value(eg["reg"])),
                      adv_prior=float(eg_tape.value(eg["adv_prior"])),
                      adv_exp=float(eg_tape.value(eg["adv_exp"])),
                      eg_loss=float(eg_tape.value(eg["eg_loss"])),
                      dz_loss=float(dz_tape.value(dzn["dz_loss"])),
                      de_loss=float(de_tape.value(den["de_loss"])))


# ---- model construction ------------------------------------------------

def _child_seeds(seed, count):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def new_cgan_model(param_dim, label_dim, config):
    """Fresh CGAN with Glorot-initialized networks, sized per the config."""
    z_dim = config.z_dim or DEFAULT_Z_DIM
    g_hidden = tuple(config.g_hidden) if config.g_hidden else CGAN_G_HIDDEN
    d_hidden = tuple(config.d_hidden) if config.d_hidden else CGAN_D_HIDDEN
    g_spec = nn.MlpSpec((z_dim + label_dim, *g_hidden, param_dim), "tanh")
    d_spec = nn.MlpSpec((param_dim + label_dim, *d_hidden, 1), "sigmoid")
    sg, sd = _child_seeds(config.seed, 2)
    return CganModel(g_spec=g_spec, g=nn.init_weights(g_spec, sg),
                     d_spec=d_spec, d=nn.init_weights(d_spec, sd),
                     bounds=unit_bounds(param_dim), beta=config.beta,
                     z_dim=z_dim, label_dim=label_dim, param_dim=param_dim,
                     seed=config.seed)


def new_caae_model(param_dim, label_dim, config):
    """Fresh CAAE with Glorot-initialized networks, sized per the config."""
    latent = config.latent_dim or DEFAULT_LATENT_DIM
    e_hidden = tuple(config.e_hidden) if config.e_hidden else CAAE_E_HIDDEN
    g_hidden = tuple(config.g_hidden) if config.g_hidden else CAAE_G_HIDDEN
    dz_hidden = tuple(config.dz_hidden) if config.dz_hidden else CAAE_DZ_HIDDEN
    de_hidden = tuple(config.d_hidden) if config.d_hidden else CAAE_DE_HIDDEN
    e_spec = nn.MlpSpec((param_dim, *e_hidden, latent), "tanh")
    g_spec = nn.MlpSpec((latent + label_dim, *g_hidden, param_dim), "tanh")
    dz_spec = nn.MlpSpec((latent, *dz_hidden, 1), "sigmoid")
    de_spec = nn.MlpSpec((param_dim + label_dim, *de_hidden, 1), "sigmoid")
    se, sg, sz, sd = _child_seeds(config.seed, 4)
    return CaaeModel(e_spec=e_spec, e=nn.init_weights(e_spec, se),
                     g_spec=g_spec, g=nn.init_weights(g_spec, sg),
                     dz_spec=dz_spec, dz=nn.init_weights(dz_spec, sz),
                     de_spec=de_spec, de=nn.init_weights(de_spec, sd),
                     bounds=unit_bounds(param_dim), lam=config.lam, beta=config.beta,
                     latent_dim=latent, label_dim=label_dim, param_dim=param_dim,
                     seed=config.seed)


# ---- training ----------------------------------------------------------

def _check_dataset(dataset):
    if dataset.n == 0:
        raise ConfigError("cannot train on an empty dataset")
    if not dataset.normalized:
        raise ConfigError("dataset parameters must be normalized to [-1, 1] first")


def _grads_in_order(grads, names):
    return [grads[name] for name in names]


class _BatchSource:
    """Seeded minibatch sampler; draws labels hard-scaled or softened."""

    def __init__(self, dataset, config, rng_batch, rng_soft):
        self.params = dataset.params
        self.labels = dataset.labels
        self.batch = config.batch_size
        self.soft = config.soft_labels
        self.rng_batch = rng_batch
        self.rng_soft = rng_soft

    def draw(self):
        idx = self.rng_batch.integers(0, self.params.shape[0], size=self.batch)
        x = self.params[idx]
        if self.soft:
            y = soften_scaled_batch(self.labels[idx], self.rng_soft)
        else:
            y = scale_label(self.labels[idx])
        return x, y


def train_cgan(dataset, config):
    """Adversarial training of a CGAN on a normalized dataset.

    Alternates `d_steps` discriminator updates with one generator update
    per iteration; returns (model, log). Deterministic per config.seed.
    """
    _check_dataset(dataset)
    model = new_cgan_model(dataset.param_dim, dataset.label_dim, config)
    model.data_bounds = dataset.bounds
    seeds = _child_seeds(config.seed + 1, 3)
    batches = _BatchSource(dataset, config,
                           np.random.default_rng(seeds[0]),
                           np.random.default_rng(seeds[1]))
    rng_z = np.random.default_rng(seeds[2])

    fake_tape, fake_nodes = _build_cgan_fake(model)
    d_tape, d_nodes = _build_cgan_d(model)
    g_tape, g_nodes = _build_cgan_g(model, config.non_saturating)
    d_names = nn.param_names("D", model.d_spec)
    g_names = nn.param_names("G", model.g_spec)
    d_params = model.d.arrays()
    g_params = model.g.arrays()
    d_adam = nn.init_adam(d_params, config.learning_rate)
    g_adam = nn.init_adam(g_params, config.learning_rate)

    log = np.empty((config.iterations, 3))
    wall = np.empty(config.iterations)
    t0 = time.perf_counter()
    for it in range(config.iterations):
        try:
            for _ in range(config.d_steps):
                x, y = batches.draw()
                z = rng_z.uniform(-1.0, 1.0, size=(config.batch_size, model.z_dim))
                fake_tape.forward({"z": z, "y": y, **nn.mlp_bindings("G", model.g)},
                                  validate=False)
                fake = fake_tape.value(fake_nodes["fake"])
                d_tape.forward({"x": x, "y": y, "x_fake": fake,
                                **nn.mlp_bindings("D", model.d)}, validate=False)
                d_loss = float(d_tape.value(d_nodes["d_loss"]))
                if not np.isfinite(d_loss):
                    raise NumericError("non-finite discriminator loss")
                grads = d_tape.backward(d_nodes["d_loss"])
                nn.adam_step(d_adam, d_params, _grads_in_order(grads, d_names))

            x, y = batches.draw()
            z = rng_z.uniform(-1.0, 1.0, size=(config.batch_size, model.z_dim))
            g_tape.forward({"z": z, "y": y, **nn.mlp_bindings("G", model.g),
                            **nn.mlp_bindings("D", model.d)}, validate=False)
            g_loss = float(g_tape.value(g_nodes["g_loss"]))
            reg = float(g_tape.value(g_nodes["reg"]))
            if not np.isfinite(g_loss):
                raise NumericError("non-finite generator loss")
            grads = g_tape.backward(g_nodes["g_loss"])
            nn.adam_step(g_adam, g_params, _grads_in_order(grads, g_names))
        except NumericError as exc:
            raise NumericError(f"training aborted at iteration {it}: {exc}") from exc
        log[it] = (d_loss, g_loss, reg)
        wall[it] = time.perf_counter() - t0
    model.step = config.iterations
    return model, TrainLog(columns=("d_loss", "g_loss", "l_r"), data=log, wall=wall)


def train_caae(dataset, config):
    """Adversarial autoencoder training: per iteration one prior-discriminator
    step, one output-discriminator step (each `d_steps` times) and one
    encoder+generator step on a shared batch. Deterministic per seed."""
    _check_dataset(dataset)
    model = new_caae_model(dataset.param_dim, dataset.label_dim, config)
    model.data_bounds = dataset.bounds
    seeds = _child_seeds(config.seed + 1, 3)
    batches = _BatchSource(dataset, config,
                           np.random.default_rng(seeds[0]),
                           np.random.default_rng(seeds[1]))
    rng_z = np.random.default_rng(seeds[2])

    fake_tape, fake_nodes = _build_caae_fake(model)
    dz_tape, dz_nodes = _build_caae_dz(model)
    de_tape, de_nodes = _build_caae_de(model)
    eg_tape, eg_nodes = _build_caae_eg(model, config.non_saturating)
    dz_names = nn.param_names("Dz", model.dz_spec)
    de_names = nn.param_names("De", model.de_spec)
    eg_names = nn.param_names("E", model.e_spec) + nn.param_names("G", model.g_spec)
    dz_params = model.dz.arrays()
    de_params = model.de.arrays()
    eg_params = model.e.arrays() + model.g.arrays()
    dz_adam = nn.init_adam(dz_params, config.learning_rate)
    de_adam = nn.init_adam(de_params, config.learning_rate)
    eg_adam = nn.init_adam(eg_params, config.learning_rate)

    eg_bind = lambda: {**nn.mlp_bindings("E", model.e), **nn.mlp_bindings("G", model.g)}
    log = np.empty((config.iterations, 4))
    wall = np.empty(config.iterations)
    t0 = time.perf_counter()
    for it in range(config.iterations):
        try:
            x, y = batches.draw()
            for _ in range(config.d_steps):
                fake_tape.forward({"x": x, "y": y, **eg_bind()}, validate=False)
                code = fake_tape.value(fake_nodes["code"])
                fake = fake_tape.value(fake_nodes["fake"])

                z_star = rng_z.uniform(-1.0, 1.0,
                                       size=(config.batch_size, model.latent_dim))
                dz_tape.forward({"z_star": z_star, "code": code,
                                 **nn.mlp_bindings("Dz", model.dz)}, validate=False)
                dz_loss = float(dz_tape.value(dz_nodes["dz_loss"]))
                if not np.isfinite(dz_loss):
                    raise NumericError("non-finite prior-discriminator loss")
                grads = dz_tape.backward(dz_nodes["dz_loss"])
                nn.adam_step(dz_adam, dz_params, _grads_in_order(grads, dz_names))

                de_tape.forward({"x": x, "y": y, "x_fake": fake,
                                 **nn.mlp_bindings("De", model.de)}, validate=False)
                de_loss = float(de_tape.value(de_nodes["de_loss"]))
                if not np.isfinite(de_loss):
                    raise NumericError("non-finite output-discriminator loss")
                grads = de_tape.backward(de_nodes["de_loss"])
                nn.adam_step(de_adam, de_params, _grads_in_order(grads, de_names))

            eg_tape.forward({"x": x, "y": y, **eg_bind(),
                             **nn.mlp_bindings("Dz", model.dz),
                             **nn.mlp_bindings("De", model.de)}, validate=False)
            eg_loss = float(eg_tape.value(eg_nodes["eg_loss"]))
            recon = float(eg_tape.value(eg_nodes["recon"]))
            reg = float(eg_tape.value(eg_nodes["reg"]))
            if not np.isfinite(eg_loss):
                raise NumericError("non-finite encoder/generator loss")
            grads = eg_tape.backward(eg_nodes["eg_loss"])
            nn.adam_step(eg_adam, eg_params, _grads_in_order(grads, eg_names))
        except NumericError as exc:
            raise NumericError(f"training aborted at iteration {it}: {exc}") from exc
        log[it] = (dz_loss + de_loss, eg_loss, recon, reg)
        wall[it] = time.perf_counter() - t0
    model.step = config.iterations
    return model, TrainLog(columns=("d_loss", "g_loss", "l_g", "l_r"),
                           data=log, wall=wall)


# ---- synthesis ---------------------------------------------------------

def _check_scaled_label(y, label_dim):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (label_dim,):
        raise ContractError(f"scaled label must have shape ({label_dim},)")
    if np.any(np.abs(y) > 1.0 + 1e-9):
        raise ContractError("scaled label entries must lie in [-1, 1]")
    return y


def synthesize_cgan(model, y_scaled, seed):
    """One generated parameter vector for a scaled target label; seeded noise."""
    y = _check_scaled_label(y_scaled, model.label_dim)
    z = np.random.default_rng(seed).uniform(-1.0, 1.0, size=model.z_dim)
    return nn.mlp_apply(model.g_spec, model.g, np.concatenate([z, y]))


def synthesize_cgan_batch(model, y_scaled, rng):
    """Generated batch, one row per scaled label row."""
    y = np.atleast_2d(np.asarray(y_scaled, dtype=np.float64))
    z = rng.uniform(-1.0, 1.0, size=(y.shape[0], model.z_dim))
    return nn.mlp_apply(model.g_spec, model.g, np.concatenate([z, y], axis=1))


def synthesize_caae(model, x_source, y_scaled):
    """Decode a source parameter vector under a new target label (no sampling)."""
    x = np.asarray(x_source, dtype=np.float64)
    if x.shape != (model.param_dim,):
        raise ContractError(f"source params must have shape ({model.param_dim},)")
    y = _check_scaled_label(y_scaled, model.label_dim)
    code = nn.mlp_apply(model.e_spec, model.e, x)
    return nn.mlp_apply(model.g_spec, model.g, np.concatenate([code, y]))


def synthesize_caae_batch(model, x_source, y_scaled):
    x = np.atleast_2d(np.asarray(x_source, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y_scaled, dtype=np.float64))
    code = nn.mlp_apply(model.e_spec, model.e, x)
    return nn.mlp_apply(model.g_spec, model.g, np.concatenate([code, y], axis=1))


def encode_caae(model, x):
    """Latent codes for a batch of parameter vectors."""
    return nn.mlp_apply(model.e_spec, model.e, np.atleast_2d(np.asarray(x, np.float64)))


# ---- persistence -------------------------------------------------------

def _bounds_to_meta(bounds):
    if bounds is None:
        return None
    return {"lower": bounds.lower.tolist(), "upper": bounds.upper.tolist()}


def _bounds_from_meta(meta):
    if meta is None:
        return None
    return ParamBounds(np.array(meta["lower"]), np.array(meta["upper"]))


def save_model(model, path):
    """Write a model checkpoint (shared blob container, float32 weights)."""
    if isinstance(model, CganModel):
        meta = {"kind": "cgan", "beta": model.beta, "z_dim": model.z_dim}
        parts = {"G": (model.g_spec, model.g), "D": (model.d_spec, model.d)}
    elif isinstance(model, CaaeModel):
        meta = {"kind": "caae", "beta": model.beta, "lam": model.lam,
                "latent_dim": model.latent_dim}
        parts = {"E": (model.e_spec, model.e), "G": (model.g_spec, model.g),
                 "Dz": (model.dz_spec, model.dz), "De": (model.de_spec, model.de)}
    else:
        raise ContractError(f"cannot save model of type {type(model).__name__}")
    meta.update({"label_dim": model.label_dim, "param_dim": model.param_dim,
                 "step": model.step, "seed": model.seed,
                 "bounds": _bounds_to_meta(model.bounds),
                 "data_bounds": _bounds_to_meta(model.data_bounds)})
    nn.save_checkpoint(path, meta, parts)


def load_model(path):
    """Read a checkpoint written by `save_model`."""
    meta, parts = nn.load_checkpoint(path)
    common = dict(bounds=_bounds_from_meta(meta["bounds"]),
                  data_bounds=_bounds_from_meta(meta["data_bounds"]),
                  label_dim=meta["label_dim"], param_dim=meta["param_dim"],
                  step=meta["step"], seed=meta["seed"])
    if meta["kind"] == "cgan":
        g_spec, g = parts["G"]
        d_spec, d = parts["D"]
        return CganModel(g_spec=g_spec, g=g, d_spec=d_spec, d=d,
                         beta=meta["beta"], z_dim=meta["z_dim"], **common)
    if meta["kind"] == "caae":
        e_spec, e = parts["E"]
        g_spec, g = parts["G"]
        dz_spec, dz = parts["Dz"]
        de_spec, de = parts["De"]
        return CaaeModel(e_spec=e_spec, e=e, g_spec=g_spec, g=g,
                         dz_spec=dz_spec, dz=dz, de_spec=de_spec, de=de,
                         beta=meta["beta"], lam=meta["lam"],
                         latent_dim=meta["latent_dim"], **common)
    raise ContractError(f"unknown model kind {meta['kind']!r} in {path}")
