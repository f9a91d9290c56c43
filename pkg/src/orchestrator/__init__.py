# Run orchestration: runners, metrics and calibration
