"""ClusterGAN on speaker embeddings.

A generator maps a latent code ``[z_n, z_c]`` (Gaussian noise plus a one-hot
speaker code) to an embedding, a Wasserstein critic with gradient penalty
separates real from generated embeddings, and an encoder maps embeddings
back to the latent code. Generator and encoder are trained jointly on

    -a * mean D(G(z)) + b * cosine_recovery + c * cross_entropy

while the critic minimises ``a * (mean D(fake) - mean D(real) + lambda * GP)``.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .numeric import (
    AdamState,
    DimensionError,
    DivergenceError,
    MlpModel,
    adam_step,
    backward,
    forward,
    init_mlp,
    input_gradient,
    input_gradient_vjp,
    is_finite,
    load_checkpoint,
    log_softmax,
    save_checkpoint,
    softmax,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class DegenerateVectorError(ValueError):
    """A vector with (near) zero norm was passed to the cosine loss."""


class TrainingDiverged(DivergenceError):
    def __init__(self, message: str, model: "ClusterGanModel", iteration: int):
        super().__init__(message)
        self.model = model
        self.iteration = iteration


@dataclass
class ClusterGanConfig:
    d_c: int = 2
    d_n: int = 30
    embedding_dim: int = 512
    hidden: int = 512
    sigma: float = 0.1
    lambda_gp: float = 10.0
    batch_size: int = 64
    n_critic: int = 5
    iterations: int = 30000
    a: float = 1.0
    b: float = 2.0
    c: float = 10.0
    alpha: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    epsilon: float = 1e-8
    seed: int = 0
    snapshot_every: int = 500

    def __post_init__(self):
        for name in ("d_n", "embedding_dim", "hidden", "batch_size", "n_critic"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_c < 2:
            raise ConfigError("d_c must be at least 2")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if min(self.a, self.b, self.c) < 0 or self.lambda_gp < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.alpha <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("bad Adam hyper-parameters")

    @property
    def latent_dim(self) -> int:
        return self.d_n + self.d_c

    def adam_hyper(self) -> dict:
        return dict(alpha=self.alpha, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)


@dataclass
class LatentCode:
    z_n: np.ndarray
    z_c: np.ndarray

    def __post_init__(self):
        if np.count_nonzero(self.z_c) != 1 or self.z_c.max() != 1:
            raise ValueError("z_c must be one-hot")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.z_n, self.z_c])


@dataclass
class ClusterGanModel:
    generator: MlpModel
    discriminator: MlpModel
    encoder: MlpModel
    speaker_table: list[str]
    config: ClusterGanConfig
    iteration: int = 0
    _encoder64: MlpModel | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        cfg = self.config
        if len(self.speaker_table) != cfg.d_c or len(set(self.speaker_table)) != cfg.d_c:
            raise ConfigError("speaker_table must hold d_c unique identifiers")
        if self.generator.in_dim != cfg.latent_dim or self.generator.out_dim != cfg.embedding_dim:
            raise DimensionError("generator dims disagree with config")
        if self.discriminator.in_dim != cfg.embedding_dim or self.discriminator.out_dim != 1:
            raise DimensionError("discriminator dims disagree with config")
        if (
            self.encoder.in_dim != cfg.embedding_dim
            or self.encoder.out_dim != cfg.latent_dim
            or self.encoder.softmax_from != cfg.d_n
        ):
            raise DimensionError("encoder dims disagree with config")

    def nets(self) -> dict[str, MlpModel]:
        return {"generator": self.generator, "discriminator": self.discriminator, "encoder": self.encoder}

    def copy(self) -> "ClusterGanModel":
        return ClusterGanModel(
            self.generator.copy(),
            self.discriminator.copy(),
            self.encoder.copy(),
            list(self.speaker_table),
            self.config,
            self.iteration,
        )

    def save(self, path) -> None:
        meta = {
            "config": asdict(self.config),
            "speaker_table": self.speaker_table,
            "iteration": self.iteration,
            "seed": self.config.seed,
        }
        save_checkpoint(path, self.nets(), meta)

    @classmethod
    def load(cls, path) -> "ClusterGanModel":
        ckpt = load_checkpoint(path)
        meta = ckpt.meta
        return cls(
            ckpt.models["generator"],
            ckpt.models["discriminator"],
            ckpt.models["encoder"],
            list(meta["speaker_table"]),
            ClusterGanConfig(**meta["config"]),
            meta["iteration"],
        )


def build_model(config: ClusterGanConfig, speaker_table: list[str] | None = None, rng=None) -> ClusterGanModel:
    """Freshly initialised G (1 hidden), D (2 hidden) and E (1 hidden)."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if speaker_table is None:
        speaker_table = [str(i) for i in range(config.d_c)]
    h, x, d = config.hidden, config.embedding_dim, config.latent_dim
    gen = init_mlp([d, h, x], rng)
    disc = init_mlp([x, h, h, 1], rng)
    enc = init_mlp([x, h, d], rng, softmax_from=config.d_n)
    return ClusterGanModel(gen, disc, enc, list(speaker_table), config)


# ---------------------------------------------------------------- sampling


def sample_latent(
    config: ClusterGanConfig,
    rng: np.random.Generator,
    speaker_index: int | None = None,
    label_probs: np.ndarray | None = None,
) -> LatentCode:
    if speaker_index is None:
        p = label_probs if label_probs is not None else np.full(config.d_c, 1.0 / config.d_c)
        speaker_index = int(rng.choice(config.d_c, p=p))
    if not 0 <= speaker_index < config.d_c:
        raise ValueError(f"speaker index {speaker_index} outside [0, {config.d_c})")
    z_n = rng.normal(0.0, config.sigma, size=config.d_n)
    z_c = np.zeros(config.d_c)
    z_c[speaker_index] = 1.0
    return LatentCode(z_n, z_c)


def sample_latent_batch(
    config: ClusterGanConfig,
    rng: np.random.Generator,
    m: int,
    label_probs: np.ndarray | None = None,
    dtype=np.float32,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (z_n, z_c one-hot, speaker indices) for a batch of ``m`` codes."""
    p = label_probs if label_probs is not None else np.full(config.d_c, 1.0 / config.d_c)
    idx = rng.choice(config.d_c, size=m, p=p)
    z_n = rng.normal(0.0, config.sigma, size=(m, config.d_n)).astype(dtype)
    z_c = np.zeros((m, config.d_c), dtype=dtype)
    z_c[np.arange(m), idx] = 1
    return z_n, z_c, idx


# ------------------------------------------------------------------ losses


@dataclass
class CriticLoss:
    loss: float
    wasserstein: float  # mean D(real) - mean D(fake)
    gp: float
    grads: list[np.ndarray]


def wgan_critic_loss(
    disc: MlpModel,
    real: np.ndarray,
    fake: np.ndarray,
    lambda_gp: float,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
) -> CriticLoss:
    """``mean D(fake) - mean D(real) + lambda * mean (||grad D(x_hat)|| - 1)^2``.

    ``x_hat = eps * real + (1 - eps) * fake`` with one ``eps ~ U(0, 1)`` per
    row; pass ``eps`` explicitly to freeze the interpolation.
    """
    if real.shape != fake.shape:
        raise DimensionError(f"real {real.shape} and fake {fake.shape} differ")
    m = real.shape[0]
    dt = disc.dtype
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps")
        eps = rng.uniform(0.0, 1.0, size=(m, 1))
    eps = np.asarray(eps, dtype=dt).reshape(m, 1)

    d_real, c_real = forward(disc, real)
    d_fake, c_fake = forward(disc, fake)
    x_hat = eps * real.astype(dt) + (1 - eps) * fake.astype(dt)
    _, c_hat = forward(disc, x_hat)
    g, tape = input_gradient(disc, c_hat)
    norms = np.sqrt((g * g).sum(axis=1, keepdims=True))
    gp = float(np.mean((norms - 1.0) ** 2))
    wdist = float(d_real.mean() - d_fake.mean())
    loss = -wdist + lambda_gp * gp
    if not np.isfinite(loss):
        raise DivergenceError(f"critic loss is {loss}")

    g_real, _ = backward(disc, c_real, np.full_like(d_real, -1.0 / m))
    g_fake, _ = backward(disc, c_fake, np.full_like(d_fake, 1.0 / m))
    safe = np.where(norms > 0, norms, 1)
    g_bar = (2.0 * lambda_gp / m) * (norms - 1.0) / safe * g
    g_bar = np.where(norms > 0, g_bar, 0).astype(dt)
    g_gp = input_gradient_vjp(disc, c_hat, tape, g_bar)
    grads = [r + f + p for r, f, p in zip(g_real, g_fake, g_gp)]
    return CriticLoss(loss, wdist, gp, grads)


def gradient_penalty(disc: MlpModel, x_hat: np.ndarray) -> float:
    _, cache = forward(disc, x_hat)
    g, _ = input_gradient(disc, cache)
    norms = np.sqrt((g * g).sum(axis=1))
    return float(np.mean((norms - 1.0) ** 2))


def cosine_recovery_loss(
    z_n: np.ndarray, z_hat: np.ndarray, with_grad: bool = False
):
    """Mean of ``1 - cos(z_hat_i, z_n_i)``; optionally also d loss / d z_hat."""
    z_n = np.asarray(z_n)
    z_hat = np.asarray(z_hat)
    if z_n.shape != z_hat.shape:
        raise DimensionError(f"{z_n.shape} vs {z_hat.shape}")
    nz = np.linalg.norm(z_n, axis=1, keepdims=True)
    nh = np.linalg.norm(z_hat, axis=1, keepdims=True)
    if (nz < 1e-12).any() or (nh < 1e-12).any():
        raise DegenerateVectorError("cosine loss on a zero-norm row")
    cos = (z_n * z_hat).sum(axis=1, keepdims=True) / (nz * nh)
    loss = float(np.mean(1.0 - cos))
    if not with_grad:
        return loss
    m = z_n.shape[0]
    dcos = z_n / (nz * nh) - cos * z_hat / (nh * nh)
    return loss, (-dcos / m).astype(z_hat.dtype)


@dataclass
class ClampCounter:
    count: int = 0


CE_CLAMPS = ClampCounter()
_LOG_FLOOR = np.log(1e-30)


def cluster_ce_loss(z_c: np.ndarray, probs: np.ndarray) -> float:
    """Cross-entropy of predicted probabilities against one-hot targets.

    A zero probability at the true class is clamped to ``log(1e-30)`` and
    counted in ``CE_CLAMPS`` rather than producing ``inf``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-5):
        raise ValueError("prediction rows must sum to 1")
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    hit = np.asarray(z_c) > 0
    bad = hit & (logp < _LOG_FLOOR)
    if bad.any():
        CE_CLAMPS.count += int(bad.sum())
        warnings.warn(f"clamped {int(bad.sum())} zero probabilities in cross-entropy")
        logp = np.maximum(logp, _LOG_FLOOR)
    weighted = np.where(hit, np.asarray(z_c) * np.where(hit, logp, 0.0), 0.0)
    return float(-weighted.sum(axis=1).mean())


def cluster_ce_from_logits(z_c: np.ndarray, logits: np.ndarray):
    """Fused log-softmax cross-entropy; returns (loss, d loss / d logits)."""
    m = z_c.shape[0]
    logp = log_softmax(logits)
    loss = float(-(z_c * logp).sum(axis=1).mean())
    grad = (np.exp(logp) - z_c) / m
    return loss, grad.astype(logits.dtype)


@dataclass
class GeneratorLoss:
    loss: float
    adversarial: float  # -mean D(G(z))
    cos: float
    ce: float
    gen_grads: list[np.ndarray]
    enc_grads: list[np.ndarray]


def generator_encoder_loss(
    gen: MlpModel,
    disc: MlpModel,
    enc: MlpModel,
    z_n: np.ndarray,
    z_c: np.ndarray,
    a: float,
    b: float,
    c: float,
) -> GeneratorLoss:
    """Joint G/E objective and its gradients. D is only differentiated through."""
    m, d_n = z_n.shape
    z = np.concatenate([z_n, z_c], axis=1)
    x_fake, c_gen = forward(gen, z)
    d_out, c_disc = forward(disc, x_fake)
    e_out, c_enc = forward(enc, x_fake)

    adv = -float(d_out.mean())
    cos, g_cos = cosine_recovery_loss(z_n, e_out[:, :d_n], with_grad=True)
    ce, g_ce = cluster_ce_from_logits(z_c, e_out[:, d_n:])
    loss = a * adv + b * cos + c * ce
    if not np.isfinite(loss):
        raise DivergenceError(f"generator loss is {loss}")

    _, gx_adv = backward(disc, c_disc, np.full_like(d_out, -a / m))
    g_enc_out = np.concatenate([b * g_cos, c * g_ce], axis=1).astype(enc.dtype)
    enc_grads, gx_enc = backward(enc, c_enc, g_enc_out)
    gen_grads, _ = backward(gen, c_gen, gx_adv + gx_enc)
    return GeneratorLoss(loss, adv, cos, ce, gen_grads, enc_grads)


# ---------------------------------------------------------------- training


def _finite_model(model: ClusterGanModel) -> bool:
    return all(is_finite(*net.params()) for net in model.nets().values())


def _seed_streams(seed: int):
    """Independent streams for init, data batches, latent draws and GP mixing."""
    return np.random.SeedSequence(seed).spawn(4)


def initial_model(config: ClusterGanConfig, speaker_table: list[str] | None = None) -> ClusterGanModel:
    """The model :func:`train` starts from for this config."""
    return build_model(config, speaker_table, np.random.default_rng(_seed_streams(config.seed)[0]))


def train(
    config: ClusterGanConfig,
    embeddings: np.ndarray,
    labels: np.ndarray,
    speaker_table: list[str] | None = None,
    on_iteration: Callable[[dict], None] | None = None,
) -> tuple[ClusterGanModel, list[dict]]:
    """Run the alternating critic / generator+encoder optimisation.

    ``labels`` are speaker indices into ``speaker_table``. All randomness
    derives from ``config.seed``.
    """
    embeddings = np.asarray(embeddings, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    n = embeddings.shape[0]
    if embeddings.ndim != 2 or embeddings.shape[1] != config.embedding_dim:
        raise DimensionError(
            f"embeddings {embeddings.shape} do not match dim {config.embedding_dim}"
        )
    if labels.shape != (n,):
        raise DimensionError("one label per embedding required")
    if n < config.batch_size:
        raise ConfigError(f"{n} embeddings is fewer than batch size {config.batch_size}")
    if labels.min() < 0 or labels.max() >= config.d_c:
        raise ConfigError("labels outside [0, d_c)")
    counts = np.bincount(labels, minlength=config.d_c)
    if (counts == 0).any():
        raise ConfigError(f"empty speaker classes: {np.flatnonzero(counts == 0).tolist()}")
    if not is_finite(embeddings):
        raise ConfigError("embeddings contain non-finite values")
    label_probs = counts / counts.sum()

    init_ss, data_ss, latent_ss, gp_ss = _seed_streams(config.seed)
    model = build_model(config, speaker_table, np.random.default_rng(init_ss))
    data_rng = np.random.default_rng(data_ss)
    latent_rng = np.random.default_rng(latent_ss)
    gp_rng = np.random.default_rng(gp_ss)

    G, D, E = model.generator, model.discriminator, model.encoder
    d_state = AdamState.for_params(D.params(), **config.adam_hyper())
    ge_params = G.params() + E.params()
    ge_state = AdamState.for_params(ge_params, **config.adam_hyper())

    history: list[dict] = []
    snapshot = model.copy()
    m = config.batch_size
    t0 = time.perf_counter()
    for it in range(1, config.iterations + 1):
        try:
            critic_losses, wd, gp = [], 0.0, 0.0
            for _ in range(config.n_critic):
                real = embeddings[data_rng.choice(n, size=m, replace=False)]
                z_n, z_c, _ = sample_latent_batch(config, latent_rng, m, label_probs)
                fake, _ = forward(G, np.concatenate([z_n, z_c], axis=1))
                cl = wgan_critic_loss(D, real, fake, config.lambda_gp, rng=gp_rng)
                adam_step(D.params(), [config.a * g for g in cl.grads], d_state)
                critic_losses.append(config.a * cl.loss)
                wd, gp = cl.wasserstein, cl.gp
            z_n, z_c, _ = sample_latent_batch(config, latent_rng, m, label_probs)
            gl = generator_encoder_loss(G, D, E, z_n, z_c, config.a, config.b, config.c)
            adam_step(ge_params, gl.gen_grads + gl.enc_grads, ge_state)
        except DivergenceError as exc:
            good = model if _finite_model(model) else snapshot
            raise TrainingDiverged(f"diverged at iteration {it}: {exc}", good, it - 1) from exc
        model.iteration = it
        if config.snapshot_every and it % config.snapshot_every == 0 and _finite_model(model):
            snapshot = model.copy()
        record = {
            "iteration": it,
            "critic_loss": float(np.mean(critic_losses)),
            "wasserstein": wd,
            "gp": gp,
            "generator_loss": gl.loss,
            "adversarial": gl.adversarial,
            "cos": gl.cos,
            "ce": gl.ce,
            "critic_updates": d_state.step_count,
            "generator_updates": ge_state.step_count,
            "wall_time": time.perf_counter() - t0,
        }
        history.append(record)
        if on_iteration is not None:
            on_iteration(record)
        if it % 500 == 0:
            log.info("iter %d critic %.4f gen %.4f cos %.4f ce %.4f", it,
                     record["critic_loss"], gl.loss, gl.cos, gl.ce)
    return model, history


# --------------------------------------------------------------- inference


def encode(model: ClusterGanModel, embeddings: np.ndarray) -> np.ndarray:
    """Latent rows ``[z_n_hat, softmax(z_c logits)]`` for each embedding.

    Evaluated row by row in float64 so the result does not depend on how
    the input is partitioned into batches.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.embedding_dim:
        raise DimensionError(
            f"embeddings {x.shape} do not match dim {model.config.embedding_dim}"
        )
    if model._encoder64 is None:
        model._encoder64 = model.encoder.astype(np.float64)
    enc = model._encoder64
    d_n = model.config.d_n
    out = np.empty((x.shape[0], model.config.latent_dim))
    for i in range(x.shape[0]):
        a = np.ascontiguousarray(x[i])
        for layer in enc.layers:
            a = layer.weight @ a + layer.bias
            if layer.activation == "relu":
                a = np.maximum(a, 0)
        out[i, :d_n] = a[:d_n]
        out[i, d_n:] = softmax(a[None, d_n:])[0]
    return out


def predict_speakers(model: ClusterGanModel, embeddings: np.ndarray) -> np.ndarray:
    """Argmax of the encoder's speaker posterior (diagnostics only)."""
    return encode(model, embeddings)[:, model.config.d_n:].argmax(axis=1)
