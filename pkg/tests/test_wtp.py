import logging
import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from tests.fit_utils import make_fit
from vttsbox.likelihood import ParameterSet
from vttsbox.transforms import TransformKind, TransformSpec
from vttsbox.wtp import (
    CiMethod,
    ConfidenceInterval,
    CovarianceError,
    UnboundedInterval,
    UndefinedVtts,
    ZeroCostCoefficientError,
    asymptotic_vtts,
    default_curve_grid,
    summarize_vtts,
    utility_curve,
    vtts_at,
    vtts_ci_fieller,
    vtts_ci_simulation,
    vtts_curve,
)

PARAMS = ParameterSet(-0.1, -0.6)
ASYMPTOTE = 10.0


def transform(kind: TransformKind, alpha: float = 5.0) -> TransformSpec:
    return TransformSpec(kind, None if kind is TransformKind.LINEAR else alpha)


class AsymptoticVttsTests(unittest.TestCase):
    def test_reported_estimates(self):
        subtests = (
            ("linear", -0.080, -0.630, 7.62),
            ("htf", -0.106, -0.596, 10.67),
            ("stf1", -0.113, -0.598, 11.34),
            ("stf2", -0.119, -0.598, 11.94),
            ("linear", -0.127, -0.305, 24.98),
            ("htf", -0.159, -0.274, 34.82),
            ("stf1", -0.151, -0.285, 31.79),
            ("stf2", -0.152, -0.286, 31.89),
        )
        for kind, beta_t, beta_c, expected in subtests:
            with self.subTest(kind=kind, beta_t=beta_t):
                value = asymptotic_vtts(ParameterSet(beta_t, beta_c), TransformSpec.parse(kind))
                self.assertAlmostEqual(value, expected, delta=0.005)

    def test_power_has_no_asymptote(self):
        value = asymptotic_vtts(ParameterSet(-0.013, -0.602), TransformSpec.parse("power", 1.6))
        self.assertIsInstance(value, UndefinedVtts)
        self.assertAlmostEqual(value.diagnostic_ratio, 1.30, delta=0.005)

    def test_zero_cost_coefficient_raises(self):
        params = ParameterSet(-0.1, 0.0)
        with self.assertRaises(ZeroCostCoefficientError):
            asymptotic_vtts(params, transform(TransformKind.LINEAR))
        with self.assertRaises(ZeroCostCoefficientError):
            vtts_at(params, transform(TransformKind.HTF), 10.0)


class VttsCurveTests(unittest.TestCase):
    def test_known_values(self):
        subtests = (
            (transform(TransformKind.LINEAR), 3.0, 10.0),
            (transform(TransformKind.HTF), 10.0, 5.0),
            (transform(TransformKind.HTF), -10.0, 5.0),
            (transform(TransformKind.HTF), 5.0, 0.0),
            (transform(TransformKind.STF2), 5.0, 2.929),
            (transform(TransformKind.POWER, 2.0), 3.0, 30.0),
        )
        for spec, dt, expected in subtests:
            with self.subTest(kind=spec.kind, dt=dt):
                self.assertAlmostEqual(vtts_at(PARAMS, spec, dt), expected, delta=5e-4)

    def test_limits_at_zero(self):
        subtests = (
            (transform(TransformKind.LINEAR), ASYMPTOTE),
            (transform(TransformKind.HTF), 0.0),
            (transform(TransformKind.STF1), 0.0),
            (transform(TransformKind.STF2), 0.0),
            (transform(TransformKind.STF1, 1e-9), ASYMPTOTE),
            (transform(TransformKind.POWER, 1.6), 0.0),
            (transform(TransformKind.POWER, 1.0), ASYMPTOTE),
            (transform(TransformKind.POWER, 0.5), math.inf),
            (transform(TransformKind.REVERTING), ASYMPTOTE / (1.0 + math.exp(5.0))),
        )
        for spec, expected in subtests:
            with self.subTest(kind=spec.kind, alpha=spec.alpha):
                self.assertAlmostEqual(vtts_at(PARAMS, spec, 0.0), expected, places=12)

    def test_symmetric_in_dt(self):
        dts = default_curve_grid()
        for kind in TransformKind:
            with self.subTest(kind=kind):
                spec = transform(kind)
                assert_allclose(vtts_curve(PARAMS, spec, dts), vtts_curve(PARAMS, spec, -dts))

    def test_approaches_asymptote_from_below(self):
        alpha = 5.0
        dts = np.linspace(0.1, 200 * alpha, 2000)
        for kind in (TransformKind.HTF, TransformKind.STF1, TransformKind.STF2):
            with self.subTest(kind=kind):
                curve = vtts_curve(PARAMS, transform(kind, alpha), dts)
                self.assertTrue(np.all(np.diff(curve) >= -1e-12))
                self.assertTrue(np.all(curve < ASYMPTOTE))
                self.assertLess(ASYMPTOTE - curve[-1], 0.01 * ASYMPTOTE)
                gap = ASYMPTOTE - vtts_at(PARAMS, transform(kind, alpha), 50 * alpha)
                self.assertLess(gap, 0.021 * ASYMPTOTE)

    def test_ordering_below_threshold(self):
        dt = 2.5
        htf, stf1, stf2, linear = (
            vtts_at(PARAMS, transform(kind), dt)
            for kind in (
                TransformKind.HTF,
                TransformKind.STF1,
                TransformKind.STF2,
                TransformKind.LINEAR,
            )
        )
        self.assertEqual(htf, 0.0)
        self.assertLess(htf, stf1)
        self.assertLess(stf1, stf2)
        self.assertLess(stf2, linear)

    def test_threshold_curves_cross_the_linear_value(self):
        linear = vtts_at(ParameterSet(-0.080, -0.630), transform(TransformKind.LINEAR), 1.0)
        subtests = (
            (TransformKind.HTF, -0.106, -0.596, 5.41),
            (TransformKind.STF1, -0.113, -0.598, 6.34),
            (TransformKind.STF2, -0.119, -0.598, 7.48),
        )
        for kind, beta_t, beta_c, alpha in subtests:
            params = ParameterSet(beta_t, beta_c)
            spec = transform(kind, alpha)
            with self.subTest(kind=kind):
                self.assertLess(vtts_at(params, spec, alpha / 2), linear)
                self.assertGreater(vtts_at(params, spec, 20 * alpha), linear)
                self.assertLess(vtts_at(params, spec, -alpha / 2), linear)

    def test_scale_invariance(self):
        for c in (2.0, 0.5, -2.0):
            scaled = ParameterSet(-0.1 * c, -0.6 * c, alpha=5.0)
            for kind in TransformKind:
                with self.subTest(c=c, kind=kind):
                    spec = transform(kind)
                    self.assertAlmostEqual(
                        vtts_at(scaled, spec, 7.0), vtts_at(PARAMS, spec, 7.0), places=12
                    )
                    scaled_point = asymptotic_vtts(scaled, spec)
                    point = asymptotic_vtts(PARAMS, spec)
                    if isinstance(point, UndefinedVtts):
                        point, scaled_point = point.diagnostic_ratio, scaled_point.diagnostic_ratio
                    self.assertAlmostEqual(scaled_point, point, places=12)

    def test_default_grid(self):
        grid = default_curve_grid()
        self.assertEqual(len(grid), 200)
        self.assertEqual((grid[0], grid[-1]), (-25.0, 25.0))
        self.assertNotIn(0.0, grid)
        assert_allclose(np.diff(grid[grid > 0]), 0.25)


class SimulationIntervalTests(unittest.TestCase):
    mean = (-0.106, -0.596)
    cov = np.array([[0.008**2, 0.3 * 0.008 * 0.019], [0.3 * 0.008 * 0.019, 0.019**2]])

    def test_interval_contains_point(self):
        ci = vtts_ci_simulation(self.mean, self.cov, draws=20_000, seed=3)
        self.assertIsInstance(ci, ConfidenceInterval)
        self.assertIn(60 * 0.106 / 0.596, ci)
        self.assertGreater(ci.width, 0.0)
        self.assertEqual((ci.draws, ci.seed, ci.method), (20_000, 3, CiMethod.SIMULATION))

    def test_deterministic_for_seed(self):
        a = vtts_ci_simulation(self.mean, self.cov, draws=5000, seed=9)
        b = vtts_ci_simulation(self.mean, self.cov, draws=5000, seed=9)
        c = vtts_ci_simulation(self.mean, self.cov, draws=5000, seed=10)
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)

    def test_zero_covariance_gives_point(self):
        ci = vtts_ci_simulation(self.mean, np.zeros((2, 2)))
        self.assertEqual(ci.low, ci.high)
        self.assertAlmostEqual(ci.low, 60 * 0.106 / 0.596)

    def test_invalid_covariance_raises(self):
        subtests = (
            np.array([[1.0, 2.0], [2.0, 1.0]]),
            np.array([[1.0, 0.1], [0.2, 1.0]]),
            np.array([[math.nan, 0.0], [0.0, 1.0]]),
        )
        for cov in subtests:
            with self.subTest(cov=cov.tolist()), self.assertRaises(CovarianceError):
                vtts_ci_simulation(self.mean, cov)

    def test_invalid_arguments_raise(self):
        with self.assertRaises(ValueError):
            vtts_ci_simulation(self.mean, self.cov, draws=999)
        with self.assertRaises(ValueError):
            vtts_ci_simulation(self.mean, self.cov, level=1.0)

    def test_width_is_stable_in_draws(self):
        small = vtts_ci_simulation(self.mean, self.cov, draws=100_000, seed=1)
        large = vtts_ci_simulation(self.mean, self.cov, draws=1_000_000, seed=1)
        self.assertLess(abs(large.width - small.width), 0.02 * small.width)

    def test_scale_invariance(self):
        reference = vtts_ci_simulation(self.mean, self.cov, draws=10_000, seed=4)
        for c in (2.0, 0.5):
            with self.subTest(c=c):
                ci = vtts_ci_simulation(
                    np.multiply(self.mean, c), self.cov * c * c, draws=10_000, seed=4
                )
                self.assertAlmostEqual(ci.low, reference.low, places=10)
                self.assertAlmostEqual(ci.high, reference.high, places=10)

    def test_sign_flip_agrees_up_to_simulation_noise(self):
        reference = vtts_ci_simulation(self.mean, self.cov, draws=100_000, seed=4)
        flipped = np.multiply(self.mean, -2.0)
        ci = vtts_ci_simulation(flipped, self.cov * 4.0, draws=100_000, seed=4)
        self.assertAlmostEqual(ci.low, reference.low, delta=0.01 * abs(reference.low))
        self.assertAlmostEqual(ci.high, reference.high, delta=0.01 * abs(reference.high))


class FiellerIntervalTests(unittest.TestCase):
    def test_matches_simulation(self):
        rng = np.random.default_rng(2024)
        for i in range(20):
            a = rng.uniform(-0.2, -0.05)
            b = rng.uniform(-0.8, -0.3)
            se_a = abs(a) * rng.uniform(0.05, 0.2)
            se_b = abs(b) * rng.uniform(0.02, 0.08)
            rho = rng.uniform(-0.5, 0.5)
            cov = np.array([[se_a**2, rho * se_a * se_b], [rho * se_a * se_b, se_b**2]])
            with self.subTest(i=i):
                fieller = vtts_ci_fieller((a, b), cov)
                simulated = vtts_ci_simulation((a, b), cov, draws=100_000, seed=i)
                self.assertAlmostEqual(simulated.low, fieller.low, delta=0.02 * abs(fieller.low))
                self.assertAlmostEqual(
                    simulated.high, fieller.high, delta=0.02 * abs(fieller.high)
                )

    def test_bounds_solve_the_quadratic(self):
        a, b = -0.106, -0.596
        v_aa, v_ab, v_bb = 0.008**2, 2e-5, 0.019**2
        ci = vtts_ci_fieller((a, b), [[v_aa, v_ab], [v_ab, v_bb]])
        t2 = 1.959963984540054**2
        for bound in (ci.low, ci.high):
            with self.subTest(bound=bound):
                r = bound / 60.0
                self.assertAlmostEqual(
                    (a - r * b) ** 2, t2 * (v_aa - 2 * r * v_ab + r * r * v_bb), places=12
                )
        self.assertIn(60 * a / b, ci)

    def test_insignificant_cost_coefficient_is_unbounded(self):
        ci = vtts_ci_fieller((-0.1, -0.01), [[1e-4, 0.0], [0.0, 4e-4]])
        self.assertIsInstance(ci, UnboundedInterval)
        self.assertAlmostEqual(ci.denominator_t, 0.5)
        self.assertEqual(ci.level, 0.95)

    def test_zero_covariance_gives_point(self):
        ci = vtts_ci_fieller((-0.1, -0.6), np.zeros((2, 2)))
        self.assertEqual((ci.low, ci.high), (10.0, 10.0))

    def test_not_semi_definite_raises(self):
        with self.assertRaises(CovarianceError):
            vtts_ci_fieller((-0.1, -0.6), [[1.0, 2.0], [2.0, 1.0]])

    def test_scale_invariance(self):
        cov = np.array([[0.01**2, 1e-5], [1e-5, 0.02**2]])
        reference = vtts_ci_fieller((-0.1, -0.6), cov)
        for c in (2.0, 0.5, -2.0):
            with self.subTest(c=c):
                ci = vtts_ci_fieller((-0.1 * c, -0.6 * c), cov * c * c)
                self.assertAlmostEqual(ci.low, reference.low, places=9)
                self.assertAlmostEqual(ci.high, reference.high, places=9)


class SummarizeVttsTests(unittest.TestCase):
    def setUp(self):
        logging.getLogger("vttsbox").setLevel(logging.ERROR)

    def test_simulation_summary(self):
        result = make_fit("htf", -0.106, -0.596, alpha=5.41, std_errors=(0.008, 0.019, 1.0))
        summary = summarize_vtts(result, draws=10_000, seed=5)
        self.assertEqual(summary.kind, TransformKind.HTF)
        self.assertAlmostEqual(summary.point, 10.67, delta=0.005)
        self.assertIn(summary.point, summary.interval)
        self.assertEqual((summary.draws, summary.seed), (10_000, 5))
        self.assertEqual(len(summary.curve), 200)
        dt, value = summary.curve[-1]
        self.assertEqual(dt, 25.0)
        self.assertAlmostEqual(value, summary.point * (25.0 - 5.41) / 25.0)

    def test_fieller_summary(self):
        result = make_fit("linear", -0.080, -0.630)
        summary = summarize_vtts(result, CiMethod.FIELLER, level=0.9, grid=[1.0, 2.0])
        self.assertEqual(summary.interval.method, CiMethod.FIELLER)
        self.assertEqual(summary.interval.level, 0.9)
        self.assertIsNone(summary.draws)
        self.assertEqual([dt for dt, _ in summary.curve], [1.0, 2.0])

    def test_power_summary(self):
        result = make_fit("power", -0.013, -0.602, alpha=1.6)
        summary = summarize_vtts(result, draws=1000)
        self.assertIsNone(summary.point)
        self.assertIsNone(summary.interval)
        self.assertIsInstance(summary.asymptotic_vtts, UndefinedVtts)

    def test_missing_covariance_raises(self):
        result = make_fit("stf1", alpha=6.34, covariance=False)
        with self.assertRaises(CovarianceError):
            summarize_vtts(result, draws=1000)


class UtilityCurveTests(unittest.TestCase):
    def test_time_component_only(self):
        subtests = (
            (make_fit("linear", beta_t=-0.08), lambda dt: -0.08 * dt),
            (
                make_fit("htf", beta_t=-0.1, alpha=5.0),
                lambda dt: -0.1 * np.sign(dt) * np.maximum(np.abs(dt) - 5.0, 0.0),
            ),
        )
        for result, expected in subtests:
            with self.subTest(kind=result.spec.kind):
                dts, dv = utility_curve(result)
                assert_allclose(dts, default_curve_grid())
                assert_allclose(dv, expected(dts), atol=1e-12)

    def test_custom_grid(self):
        dts, dv = utility_curve(make_fit("stf2", alpha=2.0), [-1.0, 0.0, 1.0])
        self.assertEqual(dv[1], 0.0)
        self.assertAlmostEqual(dv[0], -dv[2])
        self.assertLess(dv[2], 0.0)
