"""Joint localization and beamforming for RIS-aided mmWave links."""
