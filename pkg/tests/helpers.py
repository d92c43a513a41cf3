"""Shared fixtures for gradient and flow tests."""

import numpy as np

from conflow.scores import make_score

FIELD = (8, 8, 1)
TRAJ = (10, 2)
VECTOR_DIM = 6

SMOOTH_FAMILIES = (
    "l2", "huber", "gauss", "student_t", "field_l2", "sobolev", "psd",
    "wavelet", "combo_max", "local_combined", "traj_l2", "cgt",
)


def event_shape(family):
    if family in ("field_l2", "sobolev", "psd", "wavelet", "combo_max", "local_combined"):
        return FIELD
    if family in ("traj_l2", "cgt"):
        return TRAJ
    return (VECTOR_DIM,)


def fitted_score(family, rng):
    shape = event_shape(family)
    score = make_score(family)
    if score.requires_fit:
        y_hat = rng.normal(size=(50,) + shape)
        y = y_hat + rng.normal(size=(50,) + shape)
        if family == "cgt":
            y_hat = np.cumsum(y_hat, axis=1)
            y = y_hat + 0.3 * rng.normal(size=y.shape)
        score.fit(y_hat, y)
    return score


def random_pair(family, rng):
    shape = event_shape(family)
    y_hat = rng.normal(size=shape)
    if family == "cgt":
        y_hat = np.cumsum(y_hat, axis=0)
        return y_hat, y_hat + 0.3 * rng.normal(size=shape)
    return y_hat, y_hat + rng.normal(size=shape)


def central_difference(score, y_hat, y, h=1e-5):
    steps = h * np.eye(y.size).reshape((y.size,) + y.shape)
    up = score.evaluate(y_hat, y + steps)
    dn = score.evaluate(y_hat, y - steps)
    return ((up - dn) / (2 * h)).reshape(y.shape)


def gradient_rel_error(score, y_hat, y):
    ga = score.gradient(y_hat, y)
    gf = central_difference(score, y_hat, y)
    return np.linalg.norm(ga - gf) / max(np.linalg.norm(gf), 1e-12)
