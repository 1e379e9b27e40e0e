#!/usr/bin/env python

import unittest
import sys


def all_tests():
    from test_pep8 import TestPep8
    from test_grid import TestGrid
    from test_layers import TestLayers
    from test_graph import TestGraph
    from test_models import TestModels
    from test_training import TestTraining
    from test_preprocess import TestPreprocess
    from test_saliency import TestSaliency
    from test_evaluation import TestEvaluation
    from test_regions import TestRegions
    from test_period_match import TestPeriodMatch
    from test_container import TestContainer
    from test_synth import TestSynth
    from test_render import TestRender
    from test_run import TestRun
    from test_cli import TestCli

    loader = unittest.defaultTestLoader
    suite = unittest.TestSuite()
    for case in (TestPep8, TestGrid, TestLayers, TestGraph, TestModels, TestTraining, TestPreprocess,
                 TestSaliency, TestEvaluation, TestRegions, TestPeriodMatch, TestContainer, TestSynth,
                 TestRender, TestRun, TestCli):
        suite.addTest(loader.loadTestsFromTestCase(case))

    return suite


if __name__ == "__main__":
    runner = unittest.TextTestRunner()
    status = runner.run(all_tests())

    if status.failures or status.errors:
        sys.exit(1)
    else:
        sys.exit(0)
