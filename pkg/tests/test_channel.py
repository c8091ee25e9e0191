import json

import pytest
from context import beamx

import numpy as np

from beamx.channel import (
    DatasetHeader,
    ChannelSample,
    generate_dataset,
    load_dataset,
    read_dataset,
    sample_channels,
    save_dataset,
    split,
    write_dataset,
)
from beamx.errors import ConfigError, DatasetFormatError


def test_generation_is_deterministic():
    header = DatasetHeader(k_users=4, n_antennas=8, count=5, seed=3)
    first = sample_channels(header)
    second = sample_channels(header)

    assert all(a == b for a, b in zip(first, second))
    assert [s.sample_id for s in first] == list(range(5))


def test_samples_do_not_depend_on_count():
    few = sample_channels(DatasetHeader(k_users=2, n_antennas=3, count=3, seed=11))
    many = sample_channels(DatasetHeader(k_users=2, n_antennas=3, count=10, seed=11))

    for a, b in zip(few, many):
        assert np.array_equal(a.H, b.H)


def test_rayleigh_statistics():
    dataset = generate_dataset(DatasetHeader(k_users=4, n_antennas=8, count=500, seed=0))
    H = dataset.stack()

    assert H.shape == (500, 4, 8)
    assert abs(np.mean(np.abs(H) ** 2) - 1.0) < 0.05
    assert abs(np.mean(H.real)) < 0.02
    assert abs(np.mean(H.real ** 2) - 0.5) < 0.03


def test_different_seeds_differ():
    a = sample_channels(DatasetHeader(k_users=2, n_antennas=2, count=1, seed=1))[0]
    b = sample_channels(DatasetHeader(k_users=2, n_antennas=2, count=1, seed=2))[0]

    assert not np.array_equal(a.H, b.H)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(k_users=0, n_antennas=8, count=1),
        dict(k_users=4, n_antennas=8, count=0),
        dict(k_users=4, n_antennas=8, count=1, sigma2=0.0),
        dict(k_users=4, n_antennas=8, count=1, power_budget=-1.0),
    ],
)
def test_invalid_header(kwargs):
    with pytest.raises(ConfigError):
        DatasetHeader(**kwargs).validate()


def test_file_round_trip(tmp_path):
    path = str(tmp_path / "channels.jsonl")
    dataset = generate_dataset(DatasetHeader(k_users=3, n_antennas=4, count=6, power_budget=5.0, seed=9))
    save_dataset(path, dataset, manifest="run.manifest.json")

    loaded = load_dataset(path)
    header, samples = read_dataset(path)

    assert loaded.header == dataset.header == header
    assert loaded.manifest == "run.manifest.json"
    assert all(a == b for a, b in zip(samples, dataset.samples))


def test_truncated_file(tmp_path):
    path = str(tmp_path / "channels.jsonl")
    dataset = generate_dataset(DatasetHeader(k_users=2, n_antennas=2, count=4, seed=0))
    save_dataset(path, dataset)
    with open(path) as file:
        lines = file.readlines()
    with open(path, "w") as file:
        file.writelines(lines[:-1])

    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_dimension_mismatch_names_line(tmp_path):
    path = str(tmp_path / "channels.jsonl")
    dataset = generate_dataset(DatasetHeader(k_users=2, n_antennas=2, count=3, seed=0))
    save_dataset(path, dataset)
    with open(path) as file:
        lines = file.readlines()
    bad = json.loads(lines[2])
    bad["H"] = bad["H"][:1]
    lines[2] = json.dumps(bad) + "\n"
    with open(path, "w") as file:
        file.writelines(lines)

    with pytest.raises(DatasetFormatError) as info:
        load_dataset(path)
    assert info.value.line == 3


def test_write_rejects_wrong_count(tmp_path):
    header = DatasetHeader(k_users=2, n_antennas=2, count=2)
    with pytest.raises(ConfigError):
        write_dataset(str(tmp_path / "x.jsonl"), header, [ChannelSample(H=np.ones((2, 2), dtype=complex), sample_id=0)])


@pytest.mark.parametrize("bad", [np.ones((3, 2), dtype=complex), np.full((2, 2), np.nan, dtype=complex)])
def test_write_leaves_no_file_on_bad_sample(tmp_path, bad):
    header = DatasetHeader(k_users=2, n_antennas=2, count=3)
    good = ChannelSample(H=np.ones((2, 2), dtype=complex), sample_id=0)
    path = tmp_path / "x.jsonl"
    with pytest.raises(ConfigError):
        write_dataset(str(path), header, [good, good, ChannelSample(H=bad, sample_id=2)])

    assert not path.exists()


def test_split_and_with_power():
    dataset = generate_dataset(DatasetHeader(k_users=2, n_antennas=3, count=10, seed=4))
    train, test = split(dataset, 0.8, seed=1)

    assert len(train) == 8 and len(test) == 2
    assert set(train.sample_ids).isdisjoint(test.sample_ids)
    assert sorted(train.sample_ids + test.sample_ids) == list(range(10))

    louder = dataset.with_power(100.0)
    assert louder.header.power_budget == 100.0
    assert np.array_equal(louder.stack(), dataset.stack())

    with pytest.raises(ConfigError):
        split(dataset, 1.0)
