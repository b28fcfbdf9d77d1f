# Tests for the SDE stability checker
