"""Unit tests for inasim.power."""

import random
from fractions import Fraction

import pytest

from inasim.config import MeshConfig
from inasim.dataflow import gen_ws_trace
from inasim.driver import simulate
from inasim.exceptions import CliError, ConfigError, MetadataMismatchError
from inasim.layers import LayerShape
from inasim.packet import NodeAddress
from inasim.power import EnergyCoefficients, EnergyReport, RunMetadata, improvement, tally
from inasim.stats import EVENT_CLASSES, SimStats


def sample_stats():
    stats = SimStats()
    a, b = NodeAddress(0, 0), NodeAddress(1, 0)
    stats.count(a, "unicast", "buffer_write", 4)
    stats.count(b, "unicast", "link_traversal", 2)
    stats.count(b, "ina_chain", "ina_add", 5)
    stats.count(a, "ina_chain", "ni_inject")
    return stats


class TestCoefficients:
    def test_decimal_text_is_exact(self):
        coeffs = EnergyCoefficients(ina_add="0.1", link_traversal=0.3)
        assert coeffs.ina_add == Fraction(1, 10)
        assert coeffs.link_traversal == Fraction(3, 10)

    def test_covers_every_event_class(self):
        assert tuple(EnergyCoefficients().as_dict()) == EVENT_CLASSES

    def test_rejects_bool(self):
        with pytest.raises(ConfigError, match="buffer_read"):
            EnergyCoefficients(buffer_read=True)

    def test_rejects_text(self):
        with pytest.raises(ConfigError, match="arbitration"):
            EnergyCoefficients(arbitration="cheap")

    def test_from_mapping(self):
        coeffs = EnergyCoefficients.from_mapping({"name": "x", "ni_eject": "3"})
        assert (coeffs.name, coeffs.ni_eject) == ("x", 3)
        with pytest.raises(ConfigError, match="unknown energy coefficient"):
            EnergyCoefficients.from_mapping({"photons": 1})

    def test_scaled(self):
        coeffs = EnergyCoefficients().scaled(2)
        assert coeffs.crossbar_traversal == 3
        assert coeffs.name == "default"

    def test_adder_cost(self):
        EnergyCoefficients().require_adder_cost()
        with pytest.raises(ConfigError):
            EnergyCoefficients(ina_add=0).require_adder_cost()


class TestTally:
    def test_totals(self):
        report = tally(sample_stats(), EnergyCoefficients())
        assert report.event_totals["buffer_write"] == 4
        assert report.event_totals["link_traversal"] == 4
        assert report.event_totals["ina_add"] == 4
        assert report.event_totals["ni_inject"] == 2
        assert report.total == 14
        assert report.packet_class_totals == {"ina_chain": 6, "unicast": 8}
        assert report.metadata.coefficient_set == "default"

    def test_total_is_dot_product(self):
        stats, coeffs = sample_stats(), EnergyCoefficients(ina_add="0.25")
        counts = stats.totals().as_dict()
        expected = sum(counts[e] * getattr(coeffs, e) for e in EVENT_CLASSES)
        assert tally(stats, coeffs).total == expected

    def test_scaled_report(self):
        report = tally(sample_stats(), EnergyCoefficients()).scaled(Fraction(3, 2))
        assert report.total == 21
        assert report.packet_class_totals["unicast"] == 12

    def test_empty_run(self):
        assert tally(SimStats(), EnergyCoefficients()).total == 0


class TestImprovement:
    def test_ratio(self):
        assert improvement(Fraction(30), 20) == Fraction(3, 2)

    def test_reports(self):
        meta = RunMetadata("alexnet", "CONV2", 8, 1, "ws_plain")
        base = EnergyReport(meta, {"ni_eject": Fraction(9)})
        variant = EnergyReport(RunMetadata("alexnet", "CONV2", 8, 1, "ws_ina"), {"ni_eject": Fraction(3)})
        assert improvement(base, variant) == 3

    def test_mismatched_reports(self):
        base = EnergyReport(RunMetadata("alexnet", "CONV2", 8, 1), {"ni_eject": Fraction(1)})
        variant = EnergyReport(RunMetadata("alexnet", "CONV3", 8, 1), {"ni_eject": Fraction(1)})
        with pytest.raises(MetadataMismatchError):
            improvement(base, variant)

    def test_zero(self):
        assert improvement(0, 0) == 1
        with pytest.raises(CliError, match="undefined"):
            improvement(5, 0)


class TestLinearity:
    @pytest.fixture(scope="class")
    def runs(self):
        layer = LayerShape("T", kernel=1, channels=3, filters=6, output=2)
        mesh = MeshConfig(size=4)
        return {ina: simulate(gen_ws_trace(layer, mesh, ina, mem=64)).stats for ina in (True, False)}

    @pytest.mark.parametrize("seed", range(5))
    def test_scaling_coefficients_scales_energy(self, runs, seed):
        rng = random.Random(seed)
        coeffs = EnergyCoefficients(
            **{event: Fraction(rng.randint(1, 40), rng.randint(1, 8)) for event in EVENT_CLASSES}
        )
        factor = Fraction(rng.randint(1, 50), rng.randint(1, 7))
        scaled = coeffs.scaled(factor)
        for stats in runs.values():
            base, grown = tally(stats, coeffs), tally(stats, scaled)
            assert grown.total == factor * base.total
            assert grown.event_totals == {event: factor * value for event, value in base.event_totals.items()}
            assert grown.packet_class_totals == {
                cls: factor * value for cls, value in base.packet_class_totals.items()
            }
        ratio = improvement(tally(runs[False], coeffs), tally(runs[True], coeffs))
        assert improvement(tally(runs[False], scaled), tally(runs[True], scaled)) == ratio
