"""Tests for constants in the refpriv package."""

from refpriv.const import (
    CONF_LOG_LEVEL,
    DEFAULT_ATTACK_HIDDEN,
    DEFAULT_CLASSIFIER_HIDDEN,
    DEFAULT_LOG_LEVEL,
    EQUAL_PRIVACY_MAX_GAP,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    HIGH_REFERENCE_PRIVACY_MAX_MIA_REF,
    LOG_LEVELS,
    MMD_MIN_BATCH_SIZE,
    PACKAGE,
    PUBLIC_REFERENCE_MAX_MIA_TRAIN,
    SPLIT_TAGS,
    WERM_EPOCHS,
    WERM_ES_EPOCHS,
)


def test_package():
    """Test the package name."""
    assert PACKAGE == "refpriv"


def test_regime_thresholds():
    """Test the privacy-regime selection thresholds."""
    assert PUBLIC_REFERENCE_MAX_MIA_TRAIN == 0.51
    assert EQUAL_PRIVACY_MAX_GAP == 0.04
    assert HIGH_REFERENCE_PRIVACY_MAX_MIA_REF == 0.51


def test_architectures_and_budgets():
    """Test full-scale architectures and epoch tables."""
    assert DEFAULT_CLASSIFIER_HIDDEN == (1024, 512, 256)
    assert DEFAULT_ATTACK_HIDDEN == (256, 64)
    assert MMD_MIN_BATCH_SIZE == 512
    assert WERM_EPOCHS["purchase100"] == 20
    assert WERM_ES_EPOCHS["purchase100"] < WERM_EPOCHS["purchase100"]
    assert SPLIT_TAGS == ["train", "reference", "test"]


def test_exit_codes_and_log_levels():
    """Test exit codes and available log levels."""
    assert (EXIT_OK, EXIT_CONFIG_ERROR, EXIT_RUNTIME_ERROR) == (0, 1, 2)
    assert CONF_LOG_LEVEL == "log_level"
    assert DEFAULT_LOG_LEVEL == "INFO"
    for level in ["DEBUG", "INFO", "WARNING", "ERROR"]:
        assert level in LOG_LEVELS
