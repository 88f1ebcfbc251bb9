import importlib.util
import logging
import sys
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest.mock import patch

from vttsbox.plot import write_curve_svg

CURVES = {"htf": ([1.0, 5.0, 10.0], [0.0, 0.0, 5.0]), "linear": ([1.0, 10.0], [10.0, 10.0])}


class PlotTests(unittest.TestCase):
    def setUp(self):
        logging.getLogger("vttsbox").setLevel(logging.ERROR)
        self.temp_dir = TemporaryDirectory(prefix="vttsbox_tests")
        self.path = Path(self.temp_dir.name) / "curve.svg"

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_missing_matplotlib_skips_the_plot(self):
        with patch.dict(sys.modules, {"matplotlib": None, "matplotlib.figure": None}):
            self.assertFalse(write_curve_svg(CURVES, self.path))
        self.assertFalse(self.path.exists())

    @unittest.skipUnless(importlib.util.find_spec("matplotlib"), "matplotlib is not installed")
    def test_writes_svg(self):
        self.assertTrue(write_curve_svg(CURVES, self.path))
        self.assertIn("<svg", self.path.read_text())
