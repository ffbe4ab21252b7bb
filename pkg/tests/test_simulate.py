import numpy as np
import pytest

import wncs
from wncs import simulate as sim_mod
from wncs.errors import ConfigError, InsufficientCyclesError

from conftest import pinned_network, random_network, reference_network


def pinned_perfect_network():
    """Every slot: fresh sensor data, one computed command, reliable link."""
    pinned = wncs.validate_stochastic([[0.0, 1.0], [0.0, 1.0]])
    return wncs.NetworkConfig(
        joint_channel=pinned, compute=pinned,
        ca_drop=1e-9, sc_drop=(0.0,),
        buf_controller=1, buf_actuator=1, initial=(1, 1, 1),
    )


def sim_config(net, **kw):
    defaults = dict(
        network=net, plant="saturated2d", noise=wncs.NoiseSpec(),
        horizon=200, seed=1, x0=(10.0, 10.0),
    )
    defaults.update(kw)
    return wncs.SimConfig(**defaults)


class TestDegenerateChannels:
    def test_perfect_network_is_pure_closed_loop(self):
        cfg = sim_config(pinned_perfect_network(), horizon=60)
        trace = wncs.run(cfg, debug=True)
        plant = wncs.make_plant("saturated2d")
        x = np.array([10.0, 10.0])
        for t in range(60):
            np.testing.assert_allclose(trace.x[t], x, atol=1e-12)
            np.testing.assert_allclose(trace.u[t], plant.policy(x), atol=1e-12)
            x = plant.step(x, plant.policy(x), np.zeros(2))
        assert trace.open_loop_fraction() == 0.0

    def test_all_drop_sensor_link_never_actuates(self):
        pinned = wncs.validate_stochastic([[0.0, 1.0], [0.0, 1.0]])
        net = wncs.NetworkConfig(
            joint_channel=pinned, compute=pinned,
            ca_drop=0.5, sc_drop=(1.0 - 1e-12,),
            buf_controller=1, buf_actuator=1, initial=(1, 1, 1),
        )
        trace = wncs.run(sim_config(net, horizon=200))
        assert (trace.lam_a == 0).all()
        assert (trace.u == 0).all()
        assert trace.open_loop_fraction() == 1.0

    def test_all_drop_actuator_link_matches_baseline(self):
        pinned = wncs.validate_stochastic([[0.0, 1.0], [0.0, 1.0]])
        net = wncs.NetworkConfig(
            joint_channel=pinned, compute=pinned,
            ca_drop=1.0 - 1e-12, sc_drop=(0.1,),
            buf_controller=1, buf_actuator=1, initial=(1, 1, 1),
        )
        cfg = sim_config(net, horizon=150)
        dual = wncs.run(cfg)
        base = wncs.run_baseline(cfg)
        assert (dual.u == 0).all()
        assert (base.u == 0).all()

    def test_baseline_equals_dual_on_perfect_network(self):
        cfg = sim_config(pinned_perfect_network(), horizon=80)
        np.testing.assert_array_equal(
            wncs.run(cfg).x, wncs.run_baseline(cfg).x
        )


class TestReproducibility:
    def test_identical_seed_identical_trace(self, ref_net):
        cfg = sim_config(ref_net, noise=wncs.NoiseSpec("gaussian-iid", 0.1), seed=42)
        a = wncs.run(cfg)
        b = wncs.run(cfg)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.lam_a, b.lam_a)
        np.testing.assert_array_equal(a.gamma, b.gamma)

    def test_csv_byte_identical(self, ref_net, tmp_path):
        cfg = sim_config(ref_net, noise=wncs.NoiseSpec("gaussian-iid", 0.1), seed=9)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        wncs.run(cfg).to_csv(p1)
        wncs.run(cfg).to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_noise_spec_does_not_perturb_network_path(self, ref_net):
        quiet = wncs.run(sim_config(ref_net, seed=3))
        noisy = wncs.run(
            sim_config(ref_net, seed=3, noise=wncs.NoiseSpec("gaussian-iid", 0.1))
        )
        np.testing.assert_array_equal(quiet.b_path, noisy.b_path)
        np.testing.assert_array_equal(quiet.n_path, noisy.n_path)
        np.testing.assert_array_equal(quiet.gamma, noisy.gamma)
        np.testing.assert_array_equal(quiet.gamma_p, noisy.gamma_p)


class TestProtocolInvariants:
    def test_lengths_match_rules_on_random_configs(self):
        rng = np.random.default_rng(19)
        for _ in range(10):
            net = random_network(rng)
            cfg = sim_config(net, plant="linear1d", x0=(5.0,), horizon=400,
                             seed=int(rng.integers(1 << 30)))
            trace = wncs.run(cfg, debug=True)  # debug asserts every step
            expect_lc, expect_la = 0, 0
            for t in range(cfg.horizon):
                expect_lc, expect_la = wncs.step_lengths(
                    (expect_lc, expect_la),
                    wncs.SlotOutcome(int(trace.gamma[t]), int(trace.gamma_p[t]), int(trace.L[t])),
                    int(trace.n_path[t]),
                    net,
                )
                assert (trace.lam_c[t], trace.lam_a[t]) == (expect_lc, expect_la)

    def test_open_loop_iff_actuator_empty(self, ref_net):
        trace = wncs.run(sim_config(ref_net, horizon=500, seed=5))
        np.testing.assert_array_equal(trace.open_loop(), trace.lam_a == 0)
        for t in np.where(trace.lam_a == 0)[0]:
            np.testing.assert_array_equal(trace.u[t], [0.0, 0.0])

    def test_cycle_markers_bracket_excursions(self, ref_net):
        trace = wncs.run(sim_config(ref_net, horizon=1000, seed=6))
        markers = trace.cycle_markers()
        assert (trace.lam_a[markers] == 0).all()
        for a, b in zip(markers, markers[1:]):
            assert (trace.lam_a[a + 1 : b] > 0).all()
        assert (trace.deltas() >= 1).all()

    def test_empirical_transitions_match_chain(self, ref_net):
        chain = wncs.build_z_chain(ref_net)
        cfg = sim_config(ref_net, plant="linear1d", x0=(0.0,), horizon=1_000_000, seed=1234)
        trace = wncs.run(cfg)
        xa, bb, bpb, nb = (
            ref_net.xa_max, ref_net.b_bar, ref_net.bp_bar, ref_net.n_bar
        )
        z_idx = (
            (((trace.lam_c * (xa + 1) + trace.lam_a) * (bb + 1) + trace.b_path[1:])
             * bpb + (trace.bp_path[1:] - 1)) * (nb + 1) + trace.n_path[1:]
        )
        counts = np.zeros((chain.n, chain.n))
        np.add.at(counts, (z_idx[:-1], z_idx[1:]), 1.0)
        visits = counts.sum(axis=1)
        freq = counts / np.maximum(visits[:, None], 1.0)
        checked = 0
        for i in np.where(visits >= 1000)[0]:
            deviation = np.abs(freq[i] - chain.entries[i]).max()
            assert deviation < 0.02
            checked += 1
        assert checked > 0

    def test_geometric_cycle_law(self):
        # pinned network: P(Delta = l) = (1-p) p^(l-1) with p the
        # probability that a slot both computes and delivers
        net = pinned_network(ca_drop=0.2, sc_drop=0.1)
        p = (1 - 0.1) * (1 - 0.2)
        cfg = sim_config(net, plant="linear1d", x0=(1.0,), horizon=400_000, seed=77,
                         margins=wncs.PlantMargins(0.5, 2.0))
        trace = wncs.run(cfg)
        stats = wncs.cycle_stats(trace, cfg.margins)
        assert stats.labels == ("lc0_la0_B1_Bp1_N1",)
        deltas = trace.deltas()
        n = len(deltas)
        assert n >= 100_000
        for l in range(1, 11):
            expect = (1 - p) * p ** (l - 1)
            se = np.sqrt(expect * (1 - expect) / n)
            observed = float((deltas == l).mean())
            assert abs(observed - expect) <= 3 * se + 1e-12

    def test_insufficient_cycles(self):
        cfg = sim_config(pinned_perfect_network(), horizon=50,
                         margins=wncs.PlantMargins(0.5, 2.0))
        trace = wncs.run(cfg)  # never open loop: no cycle boundaries
        with pytest.raises(InsufficientCyclesError):
            wncs.cycle_stats(trace, cfg.margins)


class TestBaseline:
    def test_baseline_never_retains_commands(self, ref_net):
        trace = wncs.run_baseline(sim_config(ref_net, horizon=2000, seed=3))
        assert set(np.unique(trace.lam_a)) <= {0, 1}

    def test_baseline_open_loop_at_least_as_often(self, ref_net):
        cfg = sim_config(ref_net, horizon=4000, seed=11)
        dual = wncs.run(cfg)
        base = wncs.run_baseline(cfg)
        assert base.open_loop_fraction() >= dual.open_loop_fraction()


class TestMonteCarlo:
    def test_single_seed_matches_run(self, ref_net):
        cfg = sim_config(ref_net, horizon=300, seed=4)
        report = wncs.monte_carlo(cfg, [4])
        trace = wncs.run(cfg)
        assert report.mean_norm == pytest.approx(float(trace.norm_x.mean()))
        assert report.max_norm == pytest.approx(float(trace.norm_x.max()))
        assert report.open_loop_fraction == pytest.approx(trace.open_loop_fraction())

    def test_duplicate_seeds_rejected(self, ref_net):
        with pytest.raises(ConfigError):
            wncs.monte_carlo(sim_config(ref_net), [1, 1])

    def test_empty_seeds_rejected(self, ref_net):
        with pytest.raises(ConfigError):
            wncs.monte_carlo(sim_config(ref_net), [])

    def test_worker_count_does_not_change_results(self, ref_net, monkeypatch):
        cfg = sim_config(ref_net, horizon=200, margins=wncs.PlantMargins(0.8, 0.8))
        monkeypatch.setenv("WNCS_MAX_WORKERS", "1")
        serial = wncs.monte_carlo(cfg, [1, 2, 3, 4])
        monkeypatch.setenv("WNCS_MAX_WORKERS", "4")
        parallel = wncs.monte_carlo(cfg, [4, 3, 2, 1])
        assert serial.to_dict() == parallel.to_dict()
        assert serial.xi_decay_slope == parallel.xi_decay_slope


class TestTraceOutput:
    def test_csv_columns(self, ref_net, tmp_path):
        path = tmp_path / "trace.csv"
        wncs.run(sim_config(ref_net, horizon=5), trace_path=path)
        header = path.read_text().splitlines()[0].split(",")
        assert header == [
            "t", "x0", "x1", "norm_x", "u0", "u1", "lam_c", "lam_a",
            "B", "Bp", "N", "gamma", "gamma_p", "L", "open_loop", "cycle_start",
        ]
        assert len(path.read_text().splitlines()) == 6

    def test_streaming_matches_in_memory(self, ref_net, tmp_path, monkeypatch):
        cfg = sim_config(ref_net, horizon=120, seed=8)
        in_memory = tmp_path / "mem.csv"
        wncs.run(cfg, trace_path=in_memory)
        monkeypatch.setattr(sim_mod, "TRACE_MEMORY_LIMIT", 50)
        streamed_path = tmp_path / "stream.csv"
        streamed = wncs.run(cfg, trace_path=streamed_path)
        assert streamed.x is None  # per-step states were not retained
        assert streamed_path.read_bytes() == in_memory.read_bytes()

    def test_streaming_requires_path(self, ref_net, monkeypatch):
        monkeypatch.setattr(sim_mod, "TRACE_MEMORY_LIMIT", 50)
        with pytest.raises(ConfigError):
            wncs.run(sim_config(ref_net, horizon=120))


class TestConfigValidation:
    def test_bad_mode(self, ref_net):
        with pytest.raises(ConfigError):
            wncs.SimConfig(network=ref_net, plant="saturated2d",
                           noise=wncs.NoiseSpec(), horizon=10, seed=0,
                           x0=(0.0, 0.0), mode="triple-buffer")

    def test_bad_horizon(self, ref_net):
        with pytest.raises(ConfigError):
            wncs.SimConfig(network=ref_net, plant="saturated2d",
                           noise=wncs.NoiseSpec(), horizon=0, seed=0, x0=(0.0, 0.0))

    def test_x0_dimension_checked(self, ref_net):
        cfg = wncs.SimConfig(network=ref_net, plant="saturated2d",
                             noise=wncs.NoiseSpec(), horizon=10, seed=0, x0=(1.0,))
        with pytest.raises(ConfigError):
            wncs.run(cfg)
