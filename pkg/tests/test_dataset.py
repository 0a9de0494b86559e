import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from bilateral_il.dataset import (Dataset, EpisodeRecorder, NormStats, SchemaError, add_input_noise,
                                  apply_normalizer, augment_sample, build_dataset, decimate,
                                  denormalize, fit_normalizer, interleave, lowpass_channels,
                                  make_sequences, read_episode_csv, write_episode_csv,
                                  SequenceSample)

from helpers import synthetic_episode

DT = 0.002


def episode(n=2000, seed=0, name="ep"):
    rng = np.random.default_rng(seed)
    return synthetic_episode(rng.normal(0, 0.3, n), seed=seed, meta={"name": name, "seed": seed})


# ------------------------------------------------------------------- CSV

def test_csv_round_trip_bit_exact(tmp_path):
    ep = episode(300)
    write_episode_csv(ep, tmp_path / "a.csv")
    back = read_episode_csv(tmp_path / "a.csv")
    for name in ("t", "leader", "follower", "leader_cmd", "follower_cmd", "contact"):
        assert np.array_equal(getattr(ep, name), getattr(back, name))
    assert back.meta == ep.meta and back.dt == ep.dt


@pytest.mark.parametrize("line,mutate", [
    (1, lambda ls: ["# something else"] + ls[1:]),
    (2, lambda ls: ls[:1] + ["# meta {bad json"] + ls[2:]),
    (3, lambda ls: ls[:2] + ["t,wrong"] + ls[3:]),
    (7, lambda ls: ls[:6] + [ls[6] + ",1.0"] + ls[7:]),
    (9, lambda ls: ls[:8] + [ls[8].replace(ls[8].split(",")[3], "abc", 1)] + ls[9:]),
])
def test_schema_errors_name_file_and_line(tmp_path, line, mutate):
    path = tmp_path / "bad.csv"
    write_episode_csv(episode(20), path)
    path.write_text("\n".join(mutate(path.read_text().splitlines())) + "\n")
    with pytest.raises(SchemaError, match=rf"bad\.csv:{line}:"):
        read_episode_csv(path)


def test_recorder_counts_match_duration():
    rec = EpisodeRecorder(5000, DT, 8)
    for _ in range(5000):
        rec.record(np.zeros(24), np.zeros(24), np.zeros(24), np.zeros(24), 0.0)
    ep = rec.finish()
    assert len(ep) == 5000 and ep.duration == pytest.approx(10.0)


def test_channel_length_mismatch_rejected():
    ep = episode(10)
    with pytest.raises(ValueError):
        type(ep)(DT, ep.t, ep.leader, ep.follower[:-1], ep.leader_cmd, ep.follower_cmd,
                 ep.contact)


# ------------------------------------------------------------- decimation

def test_decimation_counts_and_round_trip():
    x = np.random.default_rng(0).normal(size=(2000, 3))
    parts = decimate(x, 20)
    assert len(parts) == 20 and all(len(p) == 100 for p in parts)
    assert np.array_equal(interleave(parts), x)
    # 500 Hz ticks, every 20th: 25 Hz
    t = np.arange(2000) * DT
    assert np.allclose(np.diff(decimate(t, 20)[0]), 1 / 25)


@given(st.integers(1, 40), st.integers(0, 300))
def test_round_trip_any_length(stride, extra):
    x = np.arange(stride + extra, dtype=float)
    assert np.array_equal(interleave(decimate(x, stride)), x)


def test_stride_one_identity_and_errors():
    x = np.arange(5.0)
    assert len(decimate(x, 1)) == 1 and np.array_equal(decimate(x, 1)[0], x)
    with pytest.raises(ValueError):
        decimate(x, 0)
    with pytest.raises(ValueError):
        decimate(x, 6)


def test_sequence_counts():
    ep = episode(2000)
    seqs = make_sequences(ep)
    assert len(seqs) == 20 and all(s.inputs.shape == (99, 24) for s in seqs)
    assert all(s.targets.shape == (99, 48) for s in seqs)
    assert len(make_sequences(ep, stride=1)) == 1


def test_targets_one_step_ahead_by_log_lookup():
    ep = episode(400)
    for s in make_sequences(ep, cutoff_hz=None):
        idx = s.phase + 20 * np.arange(len(s.inputs))
        assert np.array_equal(s.inputs, ep.follower[idx])
        assert np.array_equal(s.targets, np.hstack([ep.leader_cmd, ep.follower_cmd])[idx + 20])


def test_build_dataset_counts():
    eps = [(episode(2000, seed=i, name=f"e{i}"), "train" if i % 3 else "validation")
           for i in range(36)]
    ds = build_dataset(eps)
    assert ds.info["sequences"] == 720
    assert len(ds.train) + len(ds.validation) == 720
    assert build_dataset(eps, stride=1).info["sequences"] == 36


# ---------------------------------------------------------------- low-pass

def test_lowpass_constant_unchanged():
    x = np.full((100, 3), 1.25)
    assert np.array_equal(lowpass_channels(x, 10.0, DT), x)


def test_lowpass_attenuation_matches_exact_magnitude():
    fc, f = 10.0, 200.0
    t = np.arange(5000) * DT
    y = lowpass_channels(np.sin(2 * np.pi * f * t)[:, None], fc, DT)[:, 0]
    c = 2 * np.pi * fc * DT
    exact = c / abs(1 + c - np.exp(-1j * 2 * np.pi * f * DT))
    measured = np.max(np.abs(y[1000:]))
    assert measured == pytest.approx(exact, rel=0.01)
    assert 1 / measured > 15.0  # ~16x: 200 Hz is 0.8 of Nyquist


def test_lowpass_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        lowpass_channels(np.zeros((10, 1)), 1000.0, DT)


# ----------------------------------------------------------- normalization

def test_normalizer_hand_example():
    s = SequenceSample(np.array([[1.0], [3.0]]), np.array([[5.0], [5.0]]))
    st_ = fit_normalizer([s])
    assert st_.mean_in[0] == 2.0 and st_.std_in[0] == 1.0
    assert np.array_equal(apply_normalizer(s, st_).inputs[:, 0], [-1.0, 1.0])
    assert st_.std_out[0] == 1e-8 and np.all(apply_normalizer(s, st_).targets == 0)


@given(arrays(np.float64, (3, 7, 4), elements=st.floats(-100, 100)))
def test_normalize_round_trip(x):
    samples = [SequenceSample(a, a * 2.0) for a in x]
    stats = fit_normalizer(samples)
    for s in samples:
        back = denormalize(apply_normalizer(s, stats), stats)
        np.testing.assert_allclose(back.inputs, s.inputs, rtol=0, atol=1e-12 * 200)
        np.testing.assert_allclose(back.targets, s.targets, rtol=0, atol=1e-12 * 400)


def test_normalized_corpus_moments():
    eps = [(episode(2000, seed=i), "train") for i in range(4)]
    ds = build_dataset(eps)
    x = np.concatenate([s.inputs for s in ds.train])
    y = np.concatenate([s.targets for s in ds.train])
    for a in (x, y):
        assert np.all(np.abs(a.mean(0)) < 1e-9) and np.all(np.abs(a.std(0) - 1) < 1e-9)


def test_stats_from_train_split_only():
    eps = [(episode(2000, seed=0), "train"), (episode(2000, seed=1), "validation")]
    ds = build_dataset(eps)
    ref = fit_normalizer(make_sequences(eps[0][0]))
    assert np.array_equal(ds.stats.mean_in, ref.mean_in)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        fit_normalizer([])


def test_stats_dict_round_trip():
    s = NormStats(np.arange(3.0), np.ones(3), np.zeros(2), np.full(2, 2.0))
    back = NormStats.from_dict(s.to_dict())
    assert all(np.array_equal(getattr(s, k), getattr(back, k)) for k in s.to_dict())


# ------------------------------------------------------------------- noise

def test_noise_variance():
    noise = add_input_noise(np.zeros(100_000), 0)
    assert noise.var() == pytest.approx(0.01, rel=0.05)


def test_noise_only_on_inputs_and_seeded():
    s = SequenceSample(np.zeros((10, 24)), np.ones((10, 48)))
    a, b = augment_sample(s, 3), augment_sample(s, 3)
    assert np.array_equal(a.inputs, b.inputs) and a.targets is s.targets
    assert np.array_equal(augment_sample(s, 3, variance=0).inputs, s.inputs)


def test_dataset_save_load(tmp_path):
    ds = build_dataset([(episode(400, seed=i, name=f"e{i}"), "train") for i in range(2)])
    ds.save(tmp_path / "ds")
    back = Dataset.load(tmp_path / "ds")
    assert len(back.train) == len(ds.train) and back.validation == []
    assert all(np.array_equal(a.inputs, b.inputs) and a.episode == b.episode
               for a, b in zip(ds.train, back.train))
    assert np.array_equal(back.stats.std_out, ds.stats.std_out)
    with pytest.raises(FileNotFoundError):
        Dataset.load(tmp_path / "nothing")
