import logging
import math
import unittest
from dataclasses import replace
from unittest.mock import patch

import numpy as np
from numpy.testing import assert_array_equal

from vttsbox.estimation import fit as real_fit
from vttsbox.likelihood import UtilitySpec
from vttsbox.synthetic import (
    ReplicationSummary,
    SimConfig,
    SimConfigError,
    StatedChoiceDgp,
    derive_run_seed,
    generate_dataset,
    mean_ll_gap,
    replicate_study,
    simulate_choice_data,
    threshold_sweep,
    true_parameters,
    true_spec,
)
from vttsbox.transforms import TransformKind, TransformSpec

LINEAR_SPEC = UtilitySpec()
HTF_SPEC = UtilitySpec(transform=TransformSpec(TransformKind.HTF, 1.0))


class SimConfigTests(unittest.TestCase):
    def test_invalid_configs_raise(self):
        subtests = (
            dict(n_obs=0),
            dict(cost_range=(1.0, 10.0)),
            dict(time_range=(5.0, 5.0)),
            dict(time_range=(-math.inf, 25.0)),
            dict(beta_t=math.nan),
            dict(seed=-1),
        )
        for kwargs in subtests:
            with self.subTest(**kwargs), self.assertRaises(SimConfigError):
                SimConfig(**kwargs)

    def test_invalid_extended_terms_raise(self):
        subtests = (
            dict(group_scales=(0.5,)),
            dict(group_scales=(1.0, -0.8)),
            dict(income_range=(0.0, 100.0)),
        )
        for kwargs in subtests:
            with self.subTest(**kwargs), self.assertRaises(SimConfigError):
                StatedChoiceDgp(**kwargs)

    def test_true_model(self):
        config = SimConfig()
        self.assertEqual(true_spec(config).kind, TransformKind.HTF)
        self.assertEqual(true_parameters(config).alpha, 5.0)

        extended = replace(config, extended=StatedChoiceDgp())
        spec = true_spec(extended)
        self.assertEqual(spec.n_groups, 2)
        self.assertTrue(spec.use_income_elasticity)
        self.assertEqual(true_parameters(extended).scales, (1.0, 0.8))


class SimulateTests(unittest.TestCase):
    def test_deterministic(self):
        a = simulate_choice_data(SimConfig(n_obs=1000, seed=4))
        b = simulate_choice_data(SimConfig(n_obs=1000, seed=4))
        c = simulate_choice_data(SimConfig(n_obs=1000, seed=5))
        assert_array_equal(a.dt, b.dt)
        assert_array_equal(a.chose_alt1, b.chose_alt1)
        self.assertFalse(np.array_equal(a.dt, c.dt))

    def test_no_dominant_alternatives(self):
        data = simulate_choice_data(SimConfig(seed=2))
        self.assertEqual(len(data), 5000)
        self.assertTrue(np.all(data.dt * data.dc < 0))
        self.assertTrue(np.all(np.abs(data.dt) <= 25.0))
        self.assertTrue(np.all(np.abs(data.dc) <= 10.0))

    def test_choices_are_balanced(self):
        data = simulate_choice_data(SimConfig(seed=3))
        share = data.chose_alt1.mean()
        self.assertGreaterEqual(share, 0.45)
        self.assertLessEqual(share, 0.55)

    def test_generate_dataset_returns_records(self):
        records = generate_dataset(SimConfig(n_obs=50, seed=8))
        self.assertEqual(len(records), 50)
        self.assertTrue(all(r.dt * r.dc < 0 for r in records))

    def test_extended_covariates(self):
        dgp = StatedChoiceDgp()
        data = simulate_choice_data(SimConfig(n_obs=2000, seed=6, extended=dgp))
        self.assertEqual(set(np.unique(data.group)), {0, 1})
        assert_array_equal(data.dk, np.round(data.dk))
        self.assertTrue(np.all((data.dk >= -2) & (data.dk <= 2)))
        self.assertTrue(np.all((data.income >= 2000.0) & (data.income <= 12000.0)))
        self.assertTrue(np.all((data.mean_trip_time >= 10.0) & (data.mean_trip_time <= 120.0)))
        self.assertTrue(np.all(np.abs(data.dh) <= 30.0))


class RunSeedTests(unittest.TestCase):
    def test_derive_run_seed(self):
        self.assertEqual(derive_run_seed(1, 3), derive_run_seed(1, 3))
        self.assertNotEqual(derive_run_seed(1, 3), derive_run_seed(1, 4))
        self.assertNotEqual(derive_run_seed(1, 3), derive_run_seed(2, 3))
        self.assertGreaterEqual(derive_run_seed(0, 0), 0)


class ReplicateTests(unittest.TestCase):
    def setUp(self):
        logging.getLogger("vttsbox").setLevel(logging.ERROR)
        self.config = SimConfig(n_obs=1500, seed=21)

    def test_invalid_arguments_raise(self):
        subtests = (
            dict(runs=1),
            dict(runs=3, workers=0),
            dict(runs=3, vtts_draws=10),
        )
        for kwargs in subtests:
            with self.subTest(**kwargs), self.assertRaises(SimConfigError):
                replicate_study(self.config, [LINEAR_SPEC], **kwargs)
        with self.assertRaises(SimConfigError):
            replicate_study(self.config, [], runs=3)

    def test_summaries(self):
        linear, htf = replicate_study(self.config, [LINEAR_SPEC, HTF_SPEC], runs=4)

        self.assertEqual((linear.n_runs, linear.n_excluded), (4, 0))
        self.assertEqual(htf.run_indices, (0, 1, 2, 3))
        self.assertEqual(htf.estimates.shape, (4, 3))
        self.assertEqual([p.name for p in htf.parameters], ["beta_t", "beta_c", "alpha"])
        self.assertAlmostEqual(htf.parameter("beta_c").mean, -0.6, delta=0.1)
        self.assertGreater(htf.parameter("beta_t").empirical_sd, 0.0)
        self.assertEqual(htf.true_vtts, 60.0)
        self.assertIsNone(htf.vtts_coverage)
        with self.assertRaises(KeyError):
            linear.parameter("alpha")

        self.assertGreater(mean_ll_gap(htf, linear), 0.0)

    def test_workers_do_not_change_results(self):
        serial = replicate_study(self.config, [LINEAR_SPEC], runs=3)
        parallel = replicate_study(self.config, [LINEAR_SPEC], runs=3, workers=2)
        assert_array_equal(serial[0].estimates, parallel[0].estimates)
        assert_array_equal(serial[0].final_lls, parallel[0].final_lls)

    def test_identical_runs_have_no_spread(self):
        with patch("vttsbox.synthetic.derive_run_seed", return_value=7):
            (summary,) = replicate_study(self.config, [LINEAR_SPEC], runs=3)
        for parameter in summary.parameters:
            with self.subTest(name=parameter.name):
                self.assertAlmostEqual(parameter.empirical_sd, 0.0, places=12)

    def test_failed_fits_are_excluded(self):
        calls = []

        def flaky_fit(*args, **kwargs):
            calls.append(None)
            if len(calls) == 2:
                raise ValueError("optimiser exploded")
            return real_fit(*args, **kwargs)

        with patch("vttsbox.synthetic.fit", side_effect=flaky_fit):
            (summary,) = replicate_study(self.config, [LINEAR_SPEC], runs=3)
        self.assertEqual(summary.n_excluded, 1)
        self.assertEqual(summary.n_runs, 2)
        self.assertEqual(summary.run_indices, (0, 2))

    def test_vtts_coverage(self):
        (summary,) = replicate_study(self.config, [HTF_SPEC], runs=3, vtts_draws=2000)
        self.assertIsNotNone(summary.vtts_coverage)
        self.assertGreaterEqual(summary.vtts_coverage, 0.0)
        self.assertLessEqual(summary.vtts_coverage, 1.0)

    def test_power_has_no_true_vtts(self):
        spec = UtilitySpec(transform=TransformSpec.parse("power"))
        (summary,) = replicate_study(self.config, [spec], runs=2, vtts_draws=1000)
        self.assertIsNone(summary.true_vtts)
        self.assertIsNone(summary.vtts_coverage)


class LlGapTests(unittest.TestCase):
    def summary(self, runs: tuple[int, ...], lls: tuple[float, ...]) -> ReplicationSummary:
        return ReplicationSummary(
            spec=LINEAR_SPEC,
            parameters=(),
            n_runs=len(runs),
            n_excluded=0,
            run_indices=runs,
            final_lls=np.array(lls),
            estimates=np.empty((len(runs), 2)),
        )

    def test_uses_common_runs(self):
        a = self.summary((0, 1, 2), (-10.0, -20.0, -30.0))
        b = self.summary((1, 2, 3), (-25.0, -31.0, -40.0))
        self.assertEqual(mean_ll_gap(a, b), 3.0)

    def test_no_common_run_raises(self):
        with self.assertRaises(ValueError):
            mean_ll_gap(self.summary((0,), (-1.0,)), self.summary((1,), (-1.0,)))


class ThresholdSweepTests(unittest.TestCase):
    def test_sweeps_the_dgp_threshold(self):
        config = SimConfig(n_obs=100)
        with patch("vttsbox.synthetic.replicate_study", return_value=[]) as replicate:
            sweep = threshold_sweep(config, (2, 4.5), [HTF_SPEC], runs=5, workers=2)

        self.assertEqual(list(sweep), [2.0, 4.5])
        self.assertEqual(replicate.call_count, 2)
        for call, alpha in zip(replicate.call_args_list, (2.0, 4.5)):
            with self.subTest(alpha=alpha):
                self.assertEqual(call.args[0].transform.alpha, alpha)
                self.assertEqual(call.args[2], 5)
                self.assertEqual(call.kwargs, dict(workers=2))
