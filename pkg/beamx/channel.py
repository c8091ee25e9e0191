import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from beamx.defaults import default_power_budget, default_seed, default_sigma2
from beamx.errors import ConfigError, DatasetFormatError

DATASET_FORMAT = "beamx-channels/1"


@dataclass(frozen=True)
class DatasetHeader:
    """
    Settings shared by every sample of a channel dataset.

    Attributes:
        k_users (int): number of single-antenna users K.
        n_antennas (int): number of base-station antennas N.
        sigma2 (float): noise power, linear scale.
        power_budget (float): sum-power budget P, linear scale.
        count (int): number of samples.
        seed (int): unsigned 64-bit generation seed.
    """

    k_users: int
    n_antennas: int
    sigma2: float = default_sigma2
    power_budget: float = default_power_budget
    count: int = 1
    seed: int = default_seed

    def validate(self) -> "DatasetHeader":
        if self.k_users < 1:
            raise ConfigError(f"k_users must be >= 1, got {self.k_users}")
        if self.n_antennas < 1:
            raise ConfigError(f"n_antennas must be >= 1, got {self.n_antennas}")
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.power_budget > 0:
            raise ConfigError(f"power_budget must be positive, got {self.power_budget}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetHeader":
        try:
            return cls(
                k_users=int(d["k_users"]),
                n_antennas=int(d["n_antennas"]),
                sigma2=float(d["sigma2"]),
                power_budget=float(d["power_budget"]),
                count=int(d["count"]),
                seed=int(d["seed"]),
            )
        except KeyError as e:
            raise ConfigError(f"dataset header misses field {e}") from None


@dataclass(frozen=True)
class ChannelSample:
    """
    One network realisation.

    Attributes:
        H (np.ndarray): complex K×N downlink channel, row k is user k.
        sample_id (int): position of the sample in its generating stream.
    """

    H: np.ndarray
    sample_id: int

    @property
    def k_users(self) -> int:
        return self.H.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.H.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelSample):
            return NotImplemented
        return self.sample_id == other.sample_id and self.H.shape == other.H.shape \
            and bool(np.array_equal(self.H, other.H))


@dataclass
class ChannelDataset:
    """A header together with its samples."""

    header: DatasetHeader
    samples: List[ChannelSample] = field(default_factory=list)
    manifest: Optional[str] = None

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[ChannelSample]:
        return iter(self.samples)

    def __getitem__(self, i: int) -> ChannelSample:
        return self.samples[i]

    def subset(self, indices: Sequence[int]) -> "ChannelDataset":
        samples = [self.samples[int(i)] for i in indices]
        return ChannelDataset(header=replace(self.header, count=len(samples)), samples=samples)

    def with_power(self, power_budget: float) -> "ChannelDataset":
        """Same channels under another power budget."""
        header = replace(self.header, power_budget=float(power_budget)).validate()
        return ChannelDataset(header=header, samples=list(self.samples))

    def stack(self) -> np.ndarray:
        return np.stack([s.H for s in self.samples])

    @property
    def sample_ids(self) -> List[int]:
        return [s.sample_id for s in self.samples]


def _base_key(seed: int):
    key = jax.random.PRNGKey(seed & 0xFFFFFFFF)
    return jax.random.fold_in(key, (seed >> 32) & 0xFFFFFFFF)


def sample_channels(header: DatasetHeader) -> List[ChannelSample]:
    """
    Draw header.count i.i.d. Rayleigh channels, every entry CN(0, 1).

    Sample i uses its own key fold_in(key(seed), i), so a sample does not
    depend on how many others are drawn.
    """
    header.validate()
    key = _base_key(header.seed)
    shape = (2, header.k_users, header.n_antennas)

    def draw(i):
        return jax.random.normal(jax.random.fold_in(key, i), shape, dtype=jnp.float64)

    raw = np.asarray(jax.vmap(draw)(jnp.arange(header.count))) * np.sqrt(0.5)
    H = raw[:, 0] + 1j * raw[:, 1]
    logging.info(
        f"Sampled {header.count} channels K={header.k_users} N={header.n_antennas} seed={header.seed}"
    )
    return [ChannelSample(H=np.array(H[i], dtype=np.complex128), sample_id=i) for i in range(header.count)]


def generate_dataset(header: DatasetHeader) -> ChannelDataset:
    return ChannelDataset(header=header, samples=sample_channels(header))


def _encode_matrix(H: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in H]


def _decode_matrix(rows, path: str, line: int) -> np.ndarray:
    try:
        arr = np.array(rows, dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetFormatError(path, line, "channel is not a nested array of numbers") from None
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise DatasetFormatError(path, line, f"channel must be K×N [re, im] pairs, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DatasetFormatError(path, line, "channel has non-finite entries")
    return arr[..., 0] + 1j * arr[..., 1]


def write_dataset(path: str, header: DatasetHeader, samples: Sequence[ChannelSample], manifest: Optional[str] = None) -> None:
    """
    Write a dataset as JSON Lines: the header object on line 1, then one
    {"sample_id", "H"} object per sample.
    """
    header.validate()
    if len(samples) != header.count:
        raise ConfigError(f"header announces {header.count} samples, got {len(samples)}")
    for s in samples:
        if s.H.shape != (header.k_users, header.n_antennas):
            raise ConfigError(
                f"sample {s.sample_id} has shape {s.H.shape}, header says ({header.k_users}, {header.n_antennas})"
            )
        if not np.all(np.isfinite(s.H)):
            raise ConfigError(f"sample {s.sample_id} has non-finite channel entries")
    head = {"format": DATASET_FORMAT, **header.to_dict()}
    if manifest is not None:
        head["manifest"] = manifest
    with open(path, "w") as file:
        file.write(json.dumps(head) + "\n")
        for s in samples:
            file.write(json.dumps({"sample_id": int(s.sample_id), "H": _encode_matrix(s.H)}) + "\n")
    logging.info(f"Wrote {len(samples)} samples to {path}")


def read_dataset(path: str) -> Tuple[DatasetHeader, List[ChannelSample]]:
    """
    Read a dataset written by write_dataset.

    Raises:
        DatasetFormatError: malformed line, dimension mismatch with the
            header, or fewer/more samples than announced. Nothing is returned
            for a partially valid file.
    """
    dataset = load_dataset(path)
    return dataset.header, dataset.samples


def load_dataset(path: str) -> ChannelDataset:
    header = None
    manifest = None
    samples = []
    with open(path) as file:
        for lineno, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(path, lineno, f"invalid JSON ({e.msg})") from None
            if header is None:
                if not isinstance(obj, dict):
                    raise DatasetFormatError(path, lineno, "first line must be the header object")
                try:
                    header = DatasetHeader.from_dict(obj).validate()
                except (ConfigError, TypeError, ValueError) as e:
                    raise DatasetFormatError(path, lineno, f"bad header: {e}") from None
                manifest = obj.get("manifest")
                continue
            if not isinstance(obj, dict) or "H" not in obj or "sample_id" not in obj:
                raise DatasetFormatError(path, lineno, "sample line must hold 'sample_id' and 'H'")
            H = _decode_matrix(obj["H"], path, lineno)
            if H.shape != (header.k_users, header.n_antennas):
                raise DatasetFormatError(
                    path, lineno,
                    f"dimension mismatch: sample is {H.shape[0]}×{H.shape[1]}, "
                    f"header says {header.k_users}×{header.n_antennas}",
                )
            samples.append(ChannelSample(H=H, sample_id=int(obj["sample_id"])))
    if header is None:
        raise DatasetFormatError(path, 1, "empty file")
    if len(samples) != header.count:
        raise DatasetFormatError(
            path, lineno + 1 if samples else 2,
            f"truncated or padded file: header announces {header.count} samples, found {len(samples)}",
        )
    logging.info(f"Read {len(samples)} samples K={header.k_users} N={header.n_antennas} from {path}")
    return ChannelDataset(header=header, samples=samples, manifest=manifest)


def save_dataset(path: str, dataset: ChannelDataset, manifest: Optional[str] = None) -> None:
    write_dataset(path, dataset.header, dataset.samples, manifest=manifest)


def split(dataset: ChannelDataset, train_fraction: float, seed: int = default_seed) -> Tuple[ChannelDataset, ChannelDataset]:
    """
    Shuffle with jax.random.permutation and cut into a train and a test set.

    Raises:
        ConfigError: fraction outside (0, 1) or leaving one side empty.
    """
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ConfigError(f"train_fraction {train_fraction} of {n} samples leaves an empty split")
    perm = np.asarray(jax.random.permutation(jax.random.PRNGKey(seed), n))
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])
