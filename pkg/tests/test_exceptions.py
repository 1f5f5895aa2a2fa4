"""
Tests for the exception hierarchy and representative raise paths.
"""

import numpy as np
import pytest

from feel_csi import (
    ArrayConfig,
    ConfigError,
    DatasetExistsError,
    DomainError,
    EmptyDatasetError,
    FeelError,
    FormatError,
    InvalidGeometryError,
    InvariantViolation,
    MissingDatasetError,
    ShapeMismatchError,
    TemplateMismatchError,
    UndefinedInputError,
    draw_ue_geometry,
    nmse,
    to_angular_delay,
)
from feel_csi._models import CsiSample, Domain


class TestHierarchy:
    """Every simulator error derives from FeelError."""

    @pytest.mark.parametrize(
        "cls",
        [
            ConfigError,
            InvalidGeometryError,
            DomainError,
            ShapeMismatchError,
            UndefinedInputError,
            EmptyDatasetError,
            TemplateMismatchError,
            DatasetExistsError,
            MissingDatasetError,
            InvariantViolation,
            FormatError,
        ],
    )
    def test_subclass(self, cls):
        assert issubclass(cls, FeelError)
        assert not issubclass(cls, (ValueError, OSError))

    def test_catch_all(self):
        with pytest.raises(FeelError):
            raise TemplateMismatchError("names differ")


class TestFormatError:
    """FormatError carries the file and byte offset."""

    def test_with_path(self):
        err = FormatError("bad magic", "ue_001.feelcsi", 0)
        assert str(err) == "ue_001.feelcsi at offset 0: bad magic"
        assert (err.path, err.offset) == ("ue_001.feelcsi", 0)

    def test_without_path(self):
        err = FormatError("truncated header", offset=12)
        assert str(err) == "offset 12: truncated header"
        assert err.path is None


class TestRaisePaths:
    """A few library calls and the error each one raises."""

    def test_invalid_geometry(self):
        with pytest.raises(InvalidGeometryError):
            draw_ue_geometry(np.random.default_rng(0), 100.0, 150.0, 5.0, 1)

    def test_wrong_domain(self):
        sample = CsiSample(np.zeros((4, 4), dtype=complex), Domain.ANGULAR_DELAY)
        with pytest.raises(DomainError):
            to_angular_delay(sample)

    def test_zero_reference(self):
        with pytest.raises(UndefinedInputError):
            nmse(np.zeros((2, 4, 4), dtype=complex), np.ones((2, 4, 4), dtype=complex))

    def test_config_error_message(self):
        with pytest.raises(ConfigError, match="num_tx_antennas"):
            ArrayConfig(num_tx_antennas=0)
