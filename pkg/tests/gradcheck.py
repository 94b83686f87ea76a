"""Finite-difference checks of the three ClusterGAN losses on tiny nets.

Instances are redrawn until every ReLU pre-activation sits at least
``KINK_MARGIN`` away from zero, so a +/-h perturbation never crosses a kink.
"""

import numpy as np

from clusterdiar.clustergan import generator_encoder_loss, wgan_critic_loss
from clusterdiar.numeric import forward, init_mlp

from conftest import central_difference, max_relative_error, min_abs_preactivation

H = 1e-4
KINK_MARGIN = 1e-3


def _net(rng, sizes, softmax_from=None):
    net = init_mlp(sizes, rng, dtype=np.float64, softmax_from=softmax_from)
    for layer in net.layers:
        layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)
    return net


def _width(rng):
    return int(rng.integers(2, 9))


def critic_case(rng, m=3):
    """Max relative error of the critic-loss gradient (with GP) wrt D."""
    x_dim = _width(rng)
    lam = 10.0
    while True:
        disc = _net(rng, [x_dim, _width(rng), _width(rng), 1])
        real = rng.normal(size=(m, x_dim))
        fake = rng.normal(size=(m, x_dim))
        eps = rng.uniform(size=(m, 1))
        x_hat = eps * real + (1 - eps) * fake
        caches = [forward(disc, b)[1] for b in (real, fake, x_hat)]
        if min_abs_preactivation(caches) > KINK_MARGIN:
            break

    def f():
        return wgan_critic_loss(disc, real, fake, lam, eps=eps).loss

    analytic = wgan_critic_loss(disc, real, fake, lam, eps=eps).grads
    numeric = central_difference(f, disc.params(), H)
    return max_relative_error(analytic, numeric)


def _gen_enc_case(rng, weights, m=3):
    d_n, d_c, x_dim = _width(rng), _width(rng), _width(rng)
    d = d_n + d_c
    while True:
        gen = _net(rng, [d, _width(rng), x_dim])
        disc = _net(rng, [x_dim, _width(rng), _width(rng), 1])
        enc = _net(rng, [x_dim, _width(rng), d], softmax_from=d_n)
        z_n = rng.normal(scale=0.5, size=(m, d_n))
        z_c = np.eye(d_c)[rng.integers(d_c, size=m)]
        x_fake, gc = forward(gen, np.concatenate([z_n, z_c], axis=1))
        caches = [gc, forward(disc, x_fake)[1], forward(enc, x_fake)[1]]
        if min_abs_preactivation(caches) > KINK_MARGIN:
            break
    a, b, c = weights

    def f():
        return generator_encoder_loss(gen, disc, enc, z_n, z_c, a, b, c).loss

    res = generator_encoder_loss(gen, disc, enc, z_n, z_c, a, b, c)
    params = gen.params() + enc.params()
    numeric = central_difference(f, params, H)
    return max_relative_error(res.gen_grads + res.enc_grads, numeric)


def cosine_case(rng):
    return _gen_enc_case(rng, (0.0, 1.0, 0.0))


def ce_case(rng):
    return _gen_enc_case(rng, (0.0, 0.0, 1.0))


def joint_case(rng):
    return _gen_enc_case(rng, (1.0, 2.0, 10.0))
