"""Metrics: episode bookkeeping, filters, grouping, rank correlation, exports."""

import numpy as np
import pytest

from gaitspeed.evaluation import (
    EpisodeResult,
    MetricsReport,
    filter_episodes,
    spearman_rank,
    summarize,
)


def ep(index=0, success=True, theta_0=2.0, T=1.0, omega_d=1.0, h_exp=0.5, dropped=False):
    omega = theta_0 / T if (success and T and T > 0) else None
    return EpisodeResult(index=index, success=success, theta_0=theta_0,
                         T=T if success else None, omega=omega,
                         omega_d=omega_d,
                         target_time=theta_0 / omega_d if omega_d else None,
                         h_exp=h_exp, dropped=dropped,
                         steps=int((T or 20.0) * 20))


class TestFilter:
    def test_identity_filter(self):
        eps = [ep(i) for i in range(10)] + [ep(10, success=False)]
        kept, info = filter_episodes(eps, 0.0, False)
        assert len(kept) == 11
        assert info["discarded_fraction"] == 0.0

    def test_theta_threshold(self):
        eps = [ep(0, theta_0=0.5), ep(1, theta_0=1.0), ep(2, theta_0=np.pi / 4 - 0.01)]
        kept, _ = filter_episodes(eps, np.pi / 4, False)
        assert [e.index for e in kept] == [1]

    def test_drop_failures(self):
        eps = [ep(0), ep(1, success=False, dropped=True), ep(2)]
        kept, info = filter_episodes(eps, 0.0, True)
        assert [e.index for e in kept] == [0, 2]
        assert info["discarded_fraction"] == pytest.approx(1 / 3)


class TestSpearman:
    def brute_force(self, x, y):
        # O(n^2) rank computation with average ranks, then Pearson
        def ranks(v):
            v = np.asarray(v)
            out = np.zeros(len(v))
            for i, vi in enumerate(v):
                less = np.sum(v < vi)
                equal = np.sum(v == vi)
                out[i] = less + (equal + 1) / 2.0
            return out

        rx, ry = ranks(x), ranks(y)
        rx = rx - rx.mean()
        ry = ry - ry.mean()
        return float(np.sum(rx * ry) / np.sqrt(np.sum(rx**2) * np.sum(ry**2)))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=200)
        y = 0.5 * x + rng.normal(size=200)
        assert spearman_rank(x, y) == pytest.approx(self.brute_force(x, y), abs=1e-12)

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 5, size=150).astype(float)
        y = rng.integers(0, 5, size=150).astype(float)
        assert spearman_rank(x, y) == pytest.approx(self.brute_force(x, y), abs=1e-12)

    def test_perfect_monotone(self):
        x = np.arange(50, dtype=float)
        assert spearman_rank(x, np.exp(x / 10)) == pytest.approx(1.0, abs=1e-12)
        assert spearman_rank(x, -x) == pytest.approx(-1.0, abs=1e-12)


class TestSummarize:
    def test_prefilter_rate_always_reported(self):
        eps = [ep(i) for i in range(8)] + [ep(8, success=False), ep(9, success=False)]
        kept, _ = filter_episodes(eps, 0.0, True)
        rep = summarize(eps, kept, "none")
        assert rep.n_episodes == 10
        assert rep.n_success == 8
        assert rep.success_rate == pytest.approx(0.8)
        assert rep.n_retained == 8

    def test_single_episode_group(self):
        eps = [ep(0, theta_0=2.0, T=2.0, omega_d=1.0)]
        rep = summarize(eps, eps, "by_rounded_Td")
        g = rep.groups[0]
        assert g.count == 1
        assert g.std_T == 0.0
        assert g.p5_T == g.median_T == g.p95_T == 2.0

    def test_round_half_to_even_grouping(self):
        # target_time 2.5 rounds to 2, 3.5 rounds to 4
        eps = [ep(0, theta_0=2.5, T=1.0, omega_d=1.0),
               ep(1, theta_0=3.5, T=1.0, omega_d=1.0)]
        rep = summarize(eps, eps, "by_rounded_Td")
        keys = [g.key for g in rep.groups]
        assert keys == [2, 4]

    def test_each_episode_in_exactly_one_bucket(self):
        rng = np.random.default_rng(2)
        eps = [ep(i, theta_0=float(rng.uniform(0.8, np.pi)),
                  T=float(rng.uniform(0.5, 5)), omega_d=float(rng.uniform(0.25, 2.5)))
               for i in range(200)]
        rep = summarize(eps, eps, "by_rounded_Td")
        assert sum(g.count for g in rep.groups) == 200

    def test_omega_recomputable(self):
        eps = [ep(i, theta_0=2.0, T=1.6) for i in range(5)]
        for e in eps:
            assert abs(e.omega - e.theta_0 / e.T) < 1e-12

    def test_omega_bucket_grouping(self):
        eps = [ep(0, omega_d=0.3), ep(1, omega_d=2.4), ep(2, omega_d=2.2)]
        rep = summarize(eps, eps, "by_omega_d_bucket")
        keys = [g.key for g in rep.groups]
        assert keys == [0.25, 2.25]
        assert rep.groups[1].count == 2

    def test_spearman_reported(self):
        rng = np.random.default_rng(3)
        eps = []
        for i in range(100):
            th = float(rng.uniform(1, np.pi))
            w = float(rng.uniform(0.25, 2.5))
            eps.append(ep(i, theta_0=th, T=th / w + float(rng.normal(0, 0.05)), omega_d=w))
        rep = summarize(eps, eps, "none")
        assert rep.spearman_T_Td > 0.9


class TestReportFiles:
    def test_reports_written_and_deterministic(self, tmp_path):
        from gaitspeed.config import ExperimentConfig
        from gaitspeed.evaluation import write_reports

        exp = ExperimentConfig()
        eps = [ep(i, theta_0=1.0 + 0.1 * i, T=1.0 + 0.05 * i) for i in range(12)]
        kept, _ = filter_episodes(eps, 0.0, True)
        rep = summarize(eps, kept, "by_rounded_Td")
        meta = {"n_episodes": 12, "seed": 0}
        write_reports(tmp_path / "a", exp, eps, kept, rep, meta)
        write_reports(tmp_path / "b", exp, eps, kept, rep, meta)
        for name in ("episodes.csv", "groups.csv", "scatter.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        first = (tmp_path / "a" / "episodes.csv").read_text().splitlines()[0]
        assert first.startswith("# config_hash=")
