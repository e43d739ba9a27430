import numpy as np
import pytest

from fewmux import autodiff as ad
from fewmux import encoders as enc
from fewmux import hypernet as hn
from fewmux.autodiff import Tape, Tensor


def small_hypernet(num_tasks=3, num_layers=2, hidden=8, bottleneck=2, width=4, seed=7):
    return hn.HyperNetwork(
        hn.HyperNetworkConfig(
            num_tasks=num_tasks,
            num_layers=num_layers,
            hidden_dim=hidden,
            bottleneck=bottleneck,
            width=width,
            seed=seed,
        )
    )


class TestGenerateAdapters:
    def test_deterministic(self):
        net = small_hypernet()
        a = hn.generate_adapters(net, 1, 0, 1)
        b = hn.generate_adapters(net, 1, 0, 1)
        assert a.down_weight.data.tobytes() == b.down_weight.data.tobytes()
        assert a.ln_gain.data.tobytes() == b.ln_gain.data.tobytes()

    def test_tasks_differ(self):
        net = small_hypernet()
        a = hn.generate_adapters(net, 0, 1, 0)
        b = hn.generate_adapters(net, 2, 1, 0)
        diff = np.abs(a.down_weight.data - b.down_weight.data).max()
        assert diff > 0.0

    def test_unregistered_ids(self):
        net = small_hypernet()
        with pytest.raises(hn.HypernetError):
            hn.generate_adapters(net, 3, 0, 0)
        with pytest.raises(hn.HypernetError):
            hn.generate_adapters(net, 0, 2, 0)
        with pytest.raises(hn.HypernetError):
            hn.generate_adapters(net, 0, 0, 2)

    def test_identity_at_init(self):
        # zero up-projection heads mean generated adapters do not move activations
        net = small_hypernet()
        adapter = hn.generate_adapters(net, 0, 0, 0)
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(5, 8)))
        np.testing.assert_array_equal(adapter.apply(x).data, x.data)

    def test_gradient_through_generation(self):
        net = small_hypernet()
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 8))
        target = rng.normal(size=(3, 8))
        names = sorted(net.params)

        def loss_fn(*arrays):
            leaves = dict(zip(names, arrays))
            adapter = hn.generate_adapters(net, 1, 0, 1, params=leaves)
            out = adapter.apply(Tensor(x))
            d = out - Tensor(target)
            return (d * d).mean()

        # nudge the up heads off zero so their gradient path is exercised
        params = {k: v.copy() for k, v in net.params.items()}
        jitter = np.random.default_rng(4)
        for k in params:
            if ".up_" in k:
                params[k] = params[k] + jitter.normal(0.0, 0.05, size=params[k].shape)

        err = ad.grad_check(loss_fn, [params[k] for k in names], max_coords=6, rng=jitter)
        assert err < 1e-4


class TestAdapterApplication:
    def test_zero_up_is_identity_any_input(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            h, b = 12, 3
            adapter = hn.AdapterParams(
                down_weight=Tensor(rng.normal(size=(h, b))),
                down_bias=Tensor(rng.normal(size=b)),
                up_weight=Tensor(np.zeros((b, h))),
                up_bias=Tensor(np.zeros(h)),
                ln_gain=Tensor(rng.normal(size=h)),
                ln_bias=Tensor(rng.normal(size=h)),
            )
            x = Tensor(rng.normal(size=(4, h)) * 3)
            np.testing.assert_array_equal(adapter.apply(x).data, x.data)

    def test_bottleneck_invariant(self):
        with pytest.raises(hn.HypernetError):
            hn.AdapterParams(
                down_weight=Tensor(np.zeros((4, 4))),
                down_bias=Tensor(np.zeros(4)),
                up_weight=Tensor(np.zeros((4, 4))),
                up_bias=Tensor(np.zeros(4)),
                ln_gain=Tensor(np.ones(4)),
                ln_bias=Tensor(np.zeros(4)),
            )


class TestProjection:
    def test_output_dims(self):
        t = hn.init_projection(64, 64, seed=1)
        v = hn.init_projection(96, 64, seed=2)
        rng = np.random.default_rng(0)
        out_t = hn.project(Tensor(rng.normal(size=(3, 64))), Tensor(t["w"]), Tensor(t["b"]))
        out_v = hn.project(Tensor(rng.normal(size=(3, 96))), Tensor(v["w"]), Tensor(v["b"]))
        assert out_t.shape == (3, 64)
        assert out_v.shape == (3, 64)

    def test_identity_init(self):
        p = hn.init_projection(64, 64, seed=0, identity=True)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 64))
        out = hn.project(Tensor(x), Tensor(p["w"]), Tensor(p["b"]))
        np.testing.assert_array_equal(out.data, x)

    def test_dim_mismatch(self):
        p = hn.init_projection(64, 32, seed=0)
        with pytest.raises(hn.HypernetError):
            hn.project(Tensor(np.zeros((2, 16))), Tensor(p["w"]), Tensor(p["b"]))

    def test_gradient_flows(self):
        p = hn.init_projection(6, 4, seed=3)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 6))

        def f(tw, tb):
            z = hn.project(Tensor(x), tw, tb)
            return (z * z).mean()

        assert ad.grad_check(f, [p["w"], p["b"]]) < 1e-6


class TestBudget:
    def setup_method(self):
        self.text = enc.text_spec("base")
        self.vision = enc.vision_spec("base")

    def test_default_target_lands_between_5_and_10(self):
        choice = hn.configure_budget(self.text, self.vision, num_tasks=6, target_fraction=0.10)
        assert 0.05 < choice.report.fraction <= 0.10
        assert choice.shared_dim == hn.SHARED_DIM_DEFAULT

    def test_five_percent_target(self):
        choice = hn.configure_budget(self.text, self.vision, num_tasks=6, target_fraction=0.05)
        assert choice.report.fraction <= 0.05
        default = hn.configure_budget(self.text, self.vision, num_tasks=6, target_fraction=0.10)
        assert (choice.bottleneck, choice.width, choice.shared_dim) != (
            default.bottleneck,
            default.width,
            default.shared_dim,
        )

    def test_counts_match_actual_arrays(self):
        # brute-force oracle: instantiate every trainable piece and sum sizes
        choice = hn.configure_budget(self.text, self.vision, num_tasks=6, target_fraction=0.10)
        total = 0
        for spec in (self.text, self.vision):
            net = hn.HyperNetwork(
                hn.HyperNetworkConfig(
                    num_tasks=6,
                    num_layers=spec.num_layers,
                    hidden_dim=spec.hidden_dim,
                    bottleneck=choice.bottleneck,
                    width=choice.width,
                    seed=0,
                )
            )
            total += sum(p.size for p in net.params.values())
        for spec in (self.text, self.vision):
            proj = hn.init_projection(spec.output_dim, choice.shared_dim, seed=0)
            total += proj["w"].size + proj["b"].size
        assert total == choice.report.trainable_param_count

        frozen = enc.build_encoder(self.text).param_count() + enc.build_encoder(self.vision).param_count()
        assert frozen == choice.report.frozen_param_count

    def test_task_count_only_grows_task_table(self):
        small = hn.hypernet_param_count(2, 4, 64, 2, 8)
        big = hn.hypernet_param_count(7, 4, 64, 2, 8)
        assert big - small == 5 * hn.COND_DIM

    def test_infeasible_target(self):
        with pytest.raises(hn.HypernetError):
            hn.configure_budget(self.text, self.vision, num_tasks=6, target_fraction=0.0001)

    def test_bad_fraction(self):
        with pytest.raises(hn.HypernetError):
            hn.configure_budget(self.text, self.vision, num_tasks=6, target_fraction=1.5)
