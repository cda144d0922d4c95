# Tests for sensortrust
