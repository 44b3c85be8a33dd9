"""User geometry, path loss and i.i.d. Rayleigh channel draws.

Randomness is keyed so that user k's channel in chunk j depends only on
(seed, stream, j, k). Sweeping K therefore reuses the same users and the same
fades (common random numbers) and results do not depend on worker count.
"""
import logging

import numpy as np

from darb.exceptions import DomainError
from darb.models.schemas import ChannelRealization, Seed, UserLayout

logger = logging.getLogger(__name__)

PATH_LOSS_GAIN = 10.0 ** -3.53
PATH_LOSS_EXPONENT = 3.76
DEFAULT_D_MIN = 1.0

# Generator keys (first element after the stream index)
LAYOUT_KEY = 0
CHANNEL_KEY = 1
BEAM_KEY = 2


def path_loss(d, d_min: float = DEFAULT_D_MIN):
    """Large-scale gain 10^-3.53 / d^3.76; distances below d_min are clamped."""
    if d_min <= 0:
        raise DomainError(f"d_min must be positive, got {d_min}")
    dist = np.asarray(d, dtype=float)
    if np.any(dist < d_min):
        logger.warning("Clamping %d distance(s) below d_min=%.3g m", int(np.sum(dist < d_min)), d_min)
        dist = np.maximum(dist, d_min)
    beta = PATH_LOSS_GAIN * dist ** -PATH_LOSS_EXPONENT
    return float(beta) if beta.ndim == 0 else beta


def place_users(seed: Seed, k_users: int, area_side: float, placement: str = "corner",
                d_min: float = DEFAULT_D_MIN) -> UserLayout:
    """Drop K users uniformly on the square; the transmitter sits at the origin.

    `corner` draws from [0, side]^2 (origin at a corner), `center` from
    [-side/2, side/2]^2.
    """
    if k_users < 1:
        raise DomainError(f"k_users must be >= 1, got {k_users}")
    if area_side <= 0:
        raise DomainError(f"area_side must be positive, got {area_side}")

    rng = seed.generator(LAYOUT_KEY)
    positions = rng.uniform(0.0, area_side, size=(k_users, 2))
    if placement == "center":
        positions -= area_side / 2.0
    elif placement != "corner":
        raise DomainError(f"unknown placement '{placement}' (expected corner|center)")

    distances = np.hypot(positions[:, 0], positions[:, 1])
    betas = path_loss(distances, d_min)
    return UserLayout(positions=positions, distances=distances, betas=np.atleast_1d(betas))


def uniform_layout(k_users: int, beta: float = 1.0) -> UserLayout:
    """K statistically identical users with a common gain (analytic comparisons)."""
    return UserLayout(
        positions=np.zeros((k_users, 2)),
        distances=np.zeros(k_users),
        betas=np.full(k_users, float(beta)),
    )


def nested_layout(layout: UserLayout, k_users: int) -> UserLayout:
    """The first k users of a larger layout."""
    if not 1 <= k_users <= layout.k_users:
        raise DomainError(f"cannot take {k_users} users from a layout of {layout.k_users}")
    return UserLayout(
        positions=layout.positions[:k_users],
        distances=layout.distances[:k_users],
        betas=layout.betas[:k_users],
    )


def draw_user_channels(seed: Seed, betas: np.ndarray, l_beams: int, trials: int, chunk: int = 0) -> np.ndarray:
    """Rayleigh draws of shape (trials, K, L); each user has its own generator."""
    betas = np.asarray(betas, dtype=float)
    h = np.empty((trials, len(betas), l_beams), dtype=complex)
    for k, beta in enumerate(betas):
        rng = seed.generator(CHANNEL_KEY, chunk, k)
        g = rng.standard_normal((trials, l_beams, 2))
        h[:, k, :] = np.sqrt(beta / 2.0) * (g[..., 0] + 1j * g[..., 1])
    return h


def draw_channels(seed: Seed, layout: UserLayout, l_beams: int, trials: int | None = None) -> ChannelRealization:
    """h_k ~ CN(0, beta_k I_L). With `trials`, returns a (trials, K, L) batch."""
    if l_beams < 1:
        raise DomainError(f"l_beams must be >= 1, got {l_beams}")
    h = draw_user_channels(seed, layout.betas, l_beams, 1 if trials is None else trials)
    return ChannelRealization(h=h[0] if trials is None else h)
