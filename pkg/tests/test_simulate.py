import hashlib
import math
import warnings

import numpy as np
import pytest

from ebblip.features import BIAS, FIRST_ORDER, SECOND_ORDER, FeatureSchema, LayoutSpace
from ebblip.meta_prior import estimate_meta_prior
from ebblip.simulate import (
    DatasetStream,
    EnvironmentSpec,
    default_synthetic_schema,
    generate_environment,
    generate_supervised_stream,
    ingest_csv,
    sample_reward,
    sample_rewards,
)

from oracles import phi_quad


def wide_schema(n_first=10_000):
    return FeatureSchema([("f", list(range(n_first)))], [])


class TestEnvironment:
    def test_zero_variance_gives_means(self):
        spec = EnvironmentSpec(LayoutSpace([2, 3]), {FIRST_ORDER: 0.0, SECOND_ORDER: 0.0},
                               nu={FIRST_ORDER: 0.4, SECOND_ORDER: -0.2}, bias_prior=(0.1, 0.0))
        env = generate_environment(spec)
        cats = spec.schema.categories
        assert np.all(env.weights[cats == FIRST_ORDER] == 0.4)
        assert np.all(env.weights[cats == SECOND_ORDER] == -0.2)
        assert env.weights[0] == 0.1

    def test_sample_variance_concentrates(self):
        spec = EnvironmentSpec(wide_schema(), {FIRST_ORDER: 0.6, SECOND_ORDER: 0.1}, seed=1)
        w = generate_environment(spec).weights
        assert 0.57 <= np.var(w[1:], ddof=1) <= 0.63

    def test_reproducible(self):
        spec = EnvironmentSpec(LayoutSpace([3, 3]), seed=9)
        np.testing.assert_array_equal(generate_environment(spec).weights,
                                      generate_environment(spec).weights)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            EnvironmentSpec(LayoutSpace([2]), {FIRST_ORDER: -0.1, SECOND_ORDER: 0.1})


def _env_with_score(score):
    spec = EnvironmentSpec(LayoutSpace([1]), {FIRST_ORDER: 0.0, SECOND_ORDER: 0.0},
                           bias_prior=(score, 0.0))
    return generate_environment(spec)


class TestRewards:
    @pytest.mark.parametrize("score", [0.0, 1.0])
    def test_frequency(self, score):
        env = _env_with_score(score)
        x = np.ones((100_000, env.weights.size))
        y = sample_rewards(env, x, np.random.default_rng(0))
        p = phi_quad(score)
        sigma = math.sqrt(p * (1 - p) / y.size)
        assert abs(np.mean(y == 1) - p) < 5 * sigma

    def test_tail(self):
        env = _env_with_score(8.0)
        y = sample_rewards(env, np.ones((100_000, 2)), np.random.default_rng(1))
        assert np.mean(y == 1) >= 0.9999

    def test_single(self):
        env = _env_with_score(0.0)
        assert sample_reward(env, np.ones(2), np.random.default_rng(0)) in (-1, 1)


class TestStream:
    def env(self, seed=0):
        return generate_environment(EnvironmentSpec(default_synthetic_schema(), seed=seed))

    @pytest.mark.parametrize("n, b", [(5027, 6), (1000, 30)])
    def test_shapes(self, n, b):
        stream = generate_supervised_stream(self.env(), n, b, seed=0, n_test=100)
        assert stream.n_batches == b
        assert all(len(batch) == n for batch in stream.batches)
        ids = np.concatenate([batch.ids for batch in stream.batches])
        assert np.unique(ids).size == n * b
        assert stream.upto(2).X.shape[0] == 2 * n

    def test_base_rate_warning(self):
        spec = EnvironmentSpec(default_synthetic_schema(), {FIRST_ORDER: 0.0, SECOND_ORDER: 0.0},
                               bias_prior=(4.0, 0.0))
        with pytest.warns(RuntimeWarning, match="base rate"):
            generate_supervised_stream(generate_environment(spec), 200, 1, seed=0, n_test=0)

    def test_byte_identical_serialization(self, tmp_path):
        digests = []
        for i in range(2):
            s = generate_supervised_stream(self.env(3), 300, 3, seed=4, n_test=50)
            s.to_jsonl(tmp_path / f"s{i}.jsonl")
            digests.append(hashlib.sha256((tmp_path / f"s{i}.jsonl").read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_jsonl_round_trip(self, tmp_path):
        s = generate_supervised_stream(self.env(), 100, 2, seed=1, n_test=20)
        s.to_jsonl(tmp_path / "s.jsonl")
        back = DatasetStream.from_jsonl(tmp_path / "s.jsonl", s.schema)
        assert back.n_batches == 2
        assert (back.batches[1].X != s.batches[1].X).nnz == 0
        np.testing.assert_array_equal(back.test.y, s.test.y)


CSV = """age,colour,label
young,red,yes
old,"blue",no
young,blue,yes
old,,no
"""


class TestCsv:
    def test_hand_checked_matrix(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text(CSV)
        stream, schema = ingest_csv(path, "label", "yes", n_batches=1)
        # the row with an empty value is dropped; levels are sorted
        assert schema.features == [("age", ["old", "young"]), ("colour", ["blue", "red"])]
        X = stream.batches[0].X.toarray()
        expected = np.array([
            # bias old young blue red | old-blue old-red young-blue young-red
            [1, 0, 1, 0, 1, 0, 0, 0, 1],
            [1, 1, 0, 1, 0, 1, 0, 0, 0],
            [1, 0, 1, 1, 0, 0, 0, 1, 0],
        ], dtype=float)
        np.testing.assert_array_equal(X, expected)
        np.testing.assert_array_equal(stream.batches[0].y, [1, -1, 1])
        assert stream.provenance == "csv"

    def test_no_interactions(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text(CSV)
        _, schema = ingest_csv(path, "label", "yes", "none", n_batches=1)
        assert schema.n_second_order == 0 and schema.dimension == 5

    def test_thirteen_columns_give_78_pairs(self, tmp_path):
        header = ",".join(f"c{i}" for i in range(13)) + ",y"
        rows = [",".join(str((r + i) % 3) for i in range(13)) + f",{r % 2}" for r in range(12)]
        path = tmp_path / "wide.csv"
        path.write_text("\n".join([header] + rows) + "\n")
        _, schema = ingest_csv(path, "y", "1", n_batches=2)
        assert len(schema.interactions) == 78

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text(CSV)
        with pytest.raises(KeyError, match="target"):
            ingest_csv(path, "target", "yes")

    def test_unseen_test_level(self, tmp_path):
        (tmp_path / "train.csv").write_text(CSV)
        (tmp_path / "test.csv").write_text("age,colour,label\nold,green,no\n")
        with pytest.raises(ValueError, match="green"):
            ingest_csv(tmp_path / "train.csv", "label", "yes", n_batches=1,
                       test_path=tmp_path / "test.csv")

    def test_unreadable(self, tmp_path):
        with pytest.raises(OSError):
            ingest_csv(tmp_path / "nope.csv", "label", "yes")


def _noisy_posteriors(rng, tau, n, s2_range=(0.02, 0.1)):
    truth = rng.normal(0, math.sqrt(tau), n)
    s2 = rng.uniform(*s2_range, n)
    return truth + rng.normal(size=n) * np.sqrt(s2), s2


def test_estimator_recovers_generating_variances():
    rng = np.random.default_rng(0)
    rel = {FIRST_ORDER: [], SECOND_ORDER: []}
    for _ in range(50):
        spec_tau = {FIRST_ORDER: 0.852, SECOND_ORDER: 0.241}
        means, vars_, cats = [], [], []
        for cat, tau in spec_tau.items():
            m, s = _noisy_posteriors(rng, tau, 400)
            means.append(m)
            vars_.append(s)
            cats += [cat] * 400
        est = estimate_meta_prior(np.concatenate(means), np.concatenate(vars_), cats)
        for cat, tau in spec_tau.items():
            rel[cat].append(abs(est[cat].tau_sq_hat - tau) / tau)
    assert np.median(rel[FIRST_ORDER]) < 0.10
    assert np.median(rel[SECOND_ORDER]) < 0.10


def test_default_schema_shape():
    schema = default_synthetic_schema()
    assert schema.cardinalities.tolist() == [10, 8, 6, 6, 4]
    assert len(schema.interactions) == 10
