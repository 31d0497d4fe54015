"""
SGD with momentum and weight decay, and its learning rate schedules.
"""

from dataclasses import dataclass

import numpy as np

from .utils import InvalidConfigurationError

__all__ = ['SgdConfig', 'sgd_step', 'sgd_update_bundles']

SCHEDULES = ('linear', 'step', 'constant')


@dataclass(frozen=True)
class SgdConfig:
    """
    Parameters
    ----------
    learning_rate : float
        Base learning rate.
    schedule : {'linear', 'step', 'constant'}
        ``'linear'`` decays from ``learning_rate`` at step 0 to exactly 0 at
        ``total_steps``; ``'step'`` multiplies by ``gamma`` at each of the
        ``milestones``.
    total_steps : int
        Length of the linear schedule.
    milestones : tuple of int
        Steps at which the step schedule decays.
    gamma : float
    momentum : float
    weight_decay : float
    """

    learning_rate: float = 0.1
    schedule: str = 'linear'
    total_steps: int = 1
    milestones: tuple = ()
    gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 4e-5

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise InvalidConfigurationError("Unknown learning rate schedule {0!r}; "
                                            "expected one of {1}"
                                            .format(self.schedule, SCHEDULES))
        if self.learning_rate < 0:
            raise InvalidConfigurationError("learning_rate must be non-negative")
        if self.schedule == 'linear' and self.total_steps <= 0:
            raise InvalidConfigurationError("A linear schedule needs total_steps > 0")
        if not 0 <= self.momentum < 1:
            raise InvalidConfigurationError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidConfigurationError("weight_decay must be non-negative")
        object.__setattr__(self, 'milestones', tuple(sorted(int(m) for m in self.milestones)))

    def lr_at(self, step):
        """
        Learning rate used at 0-based ``step``.
        """
        if self.schedule == 'linear':
            remaining = max(self.total_steps - step, 0)
            return self.learning_rate * remaining / self.total_steps
        elif self.schedule == 'step':
            decays = sum(1 for milestone in self.milestones if step >= milestone)
            return self.learning_rate * self.gamma ** decays
        return self.learning_rate

    @classmethod
    def step_decay(cls, learning_rate, total_steps, fractions=(2. / 3, 8. / 9),
                   **kwargs):
        """
        Step schedule with milestones at the given fractions of
        ``total_steps``.
        """
        milestones = tuple(int(round(f * total_steps)) for f in fractions)
        return cls(learning_rate=learning_rate, schedule='step',
                   total_steps=total_steps, milestones=milestones, **kwargs)


def sgd_step(params, grads, velocities, config, step):
    """
    One in-place momentum SGD update::

        v <- momentum * v + grad + weight_decay * param
        param <- param - lr(step) * v

    Parameters
    ----------
    params, grads, velocities : dict of `~numpy.ndarray`
        Keyed alike. Keys of ``params`` without a gradient are skipped;
        missing velocities start at zero.
    """
    lr = np.float32(config.lr_at(step))
    momentum = np.float32(config.momentum)
    decay = np.float32(config.weight_decay)
    for key, param in params.items():
        grad = grads.get(key)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ValueError("Gradient for {0} has shape {1}, parameter has "
                             "shape {2}".format(key, grad.shape, param.shape))
        update = grad + decay * param if decay else grad.astype(param.dtype, copy=True)
        if key in velocities:
            velocity = velocities[key]
            velocity *= momentum
            velocity += update
        else:
            velocity = velocities[key] = update
        param -= lr * velocity
    return params


def sgd_update_bundles(bundles, config, step):
    """
    Apply `sgd_step` to every bundle that received gradients, then clear
    them.
    """
    for bundle in bundles:
        if bundle.grads:
            sgd_step(bundle.params, bundle.grads, bundle.velocity, config, step)
            bundle.zero_grad()
