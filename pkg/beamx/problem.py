from typing import Optional

import numpy as np

from beamx.channel import ChannelSample
from beamx.objectives import UtilitySpec, utility_numpy


class BeamformingProblem:
    """
    One beamforming instance: a channel and the utility to maximize under
    the sum-power budget of the utility spec.

    Attributes:
        info (str): Brief information about the problem.
        H (np.ndarray): complex K×N channel.
        spec (UtilitySpec): utility, noise power and budget.
        sample_id (int): id of the channel sample, -1 if built from a raw matrix.
        x_opt (np.ndarray, optional): best known beam matrix.
        f_opt (float, optional): utility at x_opt.
    """

    info: str
    x_opt: Optional[np.ndarray] = None
    f_opt: Optional[float] = None

    def __init__(self, H, spec: UtilitySpec, x_opt=None, sample_id: int = -1) -> None:
        """
        Args:
            H: complex K×N channel matrix or a ChannelSample.
            spec: utility specification.
            x_opt: known optimal beam matrix (optional).
        """
        if isinstance(H, ChannelSample):
            sample_id = H.sample_id
            H = H.H
        self.H = np.asarray(H, dtype=np.complex128)
        self.spec = spec.validate()
        self.sample_id = sample_id
        self.info = f"{spec.kind} K={self.k_users} N={self.n_antennas} P={spec.power_budget:g}"
        if x_opt is not None:
            self.x_opt = np.asarray(x_opt, dtype=np.complex128)
            self.f_opt = self.f(self.x_opt)

    @property
    def k_users(self) -> int:
        return self.H.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.H.shape[1]

    @property
    def power_budget(self) -> float:
        return self.spec.power_budget

    def f(self, W) -> float:
        """Utility of the N×K beam matrix W."""
        return utility_numpy(self.H, np.asarray(W), self.spec)

    def __str__(self) -> str:
        return self.info
